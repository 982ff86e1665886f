#include "hodgemc/exterior.hpp"

#include <bit>
#include <memory>
#include <mutex>

namespace hodgemc {

const char* to_string(FrameTag tag)
{
    return tag == FrameTag::coordinate ? "coordinate" : "orthonormal";
}

namespace {

int count_below(unsigned mask, int i)
{
    return std::popcount(mask & ((1u << i) - 1u));
}

}  // namespace

const ExteriorAlgebra& ExteriorAlgebra::of(int m)
{
    static std::once_flag once;
    static std::array<std::unique_ptr<ExteriorAlgebra>, kMaxAmbient + 2> table;
    std::call_once(once, [] {
        for (int k = 0; k <= kMaxAmbient + 1; ++k) table[k].reset(new ExteriorAlgebra(k));
    });
    if (m < 0 || m > kMaxAmbient + 1) throw std::invalid_argument("exterior algebra dimension out of range");
    return *table[m];
}

ExteriorAlgebra::ExteriorAlgebra(int m) : m_(m)
{
    const int n = 1 << m;
    index_.assign(n, -1);
    offset_.assign(m + 2, 0);
    for (int k = 0; k <= m; ++k) {
        offset_[k] = static_cast<int>(mask_.size());
        // Lexicographic order of k-subsets equals increasing order of the reversed bit pattern;
        // enumerate combinations directly to keep it obvious.
        std::vector<int> c(k);
        for (int i = 0; i < k; ++i) c[i] = i;
        while (true) {
            unsigned msk = 0;
            for (int i : c) msk |= 1u << i;
            index_[msk] = static_cast<int>(mask_.size());
            mask_.push_back(msk);
            degree_.push_back(k);
            int i = k - 1;
            while (i >= 0 && c[i] == m - k + i) --i;
            if (i < 0) break;
            ++c[i];
            for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
        }
    }
    offset_[m + 1] = n;

    wedge_.assign(m, Eigen::MatrixXd::Zero(n, n));
    interior_.assign(m, Eigen::MatrixXd::Zero(n, n));
    for (int c = 0; c < m; ++c) {
        for (int j = 0; j < n; ++j) {
            int s = 0;
            int t = wedge_target(c, j, s);
            if (t >= 0) wedge_[c](t, j) = s;
            t = interior_target(c, j, s);
            if (t >= 0) interior_[c](t, j) = s;
        }
    }

    for (int col = 0; col < n; ++col) {
        for (int c = 0; c < m; ++c) {
            for (int d = 0; d < m; ++d) {
                int s1 = 0, s2 = 0;
                int j1 = interior_target(d, col, s1);
                if (j1 < 0) continue;
                int j2 = wedge_target(c, j1, s2);
                if (j2 < 0) continue;
                deriv_.push_back({j2, col, c * m + d, s1 * s2});
            }
        }
        for (int l = 0; l < m; ++l) {
            for (int k = 0; k < m; ++k) {
                int s1 = 0, s2 = 0;
                int j1 = interior_target(k, col, s1);
                if (j1 < 0) continue;
                int j2 = wedge_target(l, j1, s2);
                if (j2 < 0) continue;
                for (int c = 0; c < m; ++c) {
                    for (int d = 0; d < m; ++d) {
                        int s3 = 0, s4 = 0;
                        int j3 = interior_target(d, j2, s3);
                        if (j3 < 0) continue;
                        int j4 = wedge_target(c, j3, s4);
                        if (j4 < 0) continue;
                        weitz_.push_back({j4, col, ((l * m + k) * m + c) * m + d, s1 * s2 * s3 * s4});
                    }
                }
            }
        }
    }
}

int ExteriorAlgebra::wedge_target(int c, int idx, int& sign) const
{
    const unsigned msk = mask_[idx];
    if (msk & (1u << c)) return -1;
    sign = (count_below(msk, c) % 2) ? -1 : 1;
    return index_[msk | (1u << c)];
}

int ExteriorAlgebra::interior_target(int d, int idx, int& sign) const
{
    const unsigned msk = mask_[idx];
    if (!(msk & (1u << d))) return -1;
    sign = (count_below(msk, d) % 2) ? -1 : 1;
    return index_[msk & ~(1u << d)];
}

FormValue FormValue::zero(int m, FrameTag frame)
{
    FormValue f;
    f.m = m;
    f.coeffs = Eigen::VectorXcd::Zero(1 << m);
    f.frame = frame;
    return f;
}

FormValue FormValue::scalar(int m, cplx value, FrameTag frame)
{
    FormValue f = zero(m, frame);
    f.coeffs[0] = value;
    f.degree_mask = 1u;
    return f;
}

FormValue FormValue::covector(int m, int i, FrameTag frame)
{
    return basis(m, {i}, frame);
}

FormValue FormValue::basis(int m, std::initializer_list<int> indices, FrameTag frame)
{
    FormValue f = zero(m, frame);
    unsigned msk = 0;
    int prev = -1;
    for (int i : indices) {
        if (i <= prev || i >= m) throw std::invalid_argument("basis indices must be strictly increasing and < m");
        msk |= 1u << i;
        prev = i;
    }
    f.coeffs[ExteriorAlgebra::of(m).index(msk)] = 1.0;
    f.degree_mask = 1u << indices.size();
    return f;
}

FormValue FormValue::from_coeffs(int m, const Eigen::VectorXcd& c, FrameTag frame)
{
    if (c.size() != (1 << m)) throw std::invalid_argument("coefficient vector must have length 2^m");
    FormValue f;
    f.m = m;
    f.coeffs = c;
    f.frame = frame;
    f.refresh_mask();
    return f;
}

Eigen::VectorXcd FormValue::block(int k) const
{
    const auto& ex = ExteriorAlgebra::of(m);
    return coeffs.segment(ex.degree_offset(k), ex.degree_size(k));
}

void FormValue::set_block(int k, const Eigen::VectorXcd& values)
{
    const auto& ex = ExteriorAlgebra::of(m);
    if (values.size() != ex.degree_size(k)) throw std::invalid_argument("block length must be C(m,k)");
    coeffs.segment(ex.degree_offset(k), ex.degree_size(k)) = values;
    degree_mask |= 1u << k;
}

void FormValue::refresh_mask(double tol)
{
    const auto& ex = ExteriorAlgebra::of(m);
    degree_mask = 0;
    for (int k = 0; k <= m; ++k) {
        if (coeffs.segment(ex.degree_offset(k), ex.degree_size(k)).cwiseAbs().maxCoeff() > tol) degree_mask |= 1u << k;
    }
}

static void check_same(const FormValue& a, const FormValue& b)
{
    if (a.m != b.m) throw std::invalid_argument("form dimension mismatch");
    if (a.frame != b.frame) throw std::invalid_argument("frame tag mismatch between operands");
}

FormValue& FormValue::operator+=(const FormValue& o)
{
    check_same(*this, o);
    coeffs += o.coeffs;
    degree_mask |= o.degree_mask;
    return *this;
}

FormValue& FormValue::operator*=(cplx a)
{
    coeffs *= a;
    return *this;
}

FormValue operator+(FormValue a, const FormValue& b)
{
    a += b;
    return a;
}

FormValue operator-(const FormValue& a, const FormValue& b)
{
    return a + cplx(-1.0) * b;
}

FormValue operator*(cplx a, FormValue b)
{
    b *= a;
    return b;
}

FormValue wedge(const FormValue& a, const FormValue& b)
{
    check_same(a, b);
    const auto& ex = ExteriorAlgebra::of(a.m);
    FormValue out = FormValue::zero(a.m, a.frame);
    const int n = ex.size();
    for (int i = 0; i < n; ++i) {
        if (a.coeffs[i] == cplx(0.0)) continue;
        const unsigned mi = ex.mask(i);
        for (int j = 0; j < n; ++j) {
            if (b.coeffs[j] == cplx(0.0)) continue;
            const unsigned mj = ex.mask(j);
            if (mi & mj) continue;
            // sign of the shuffle: pairs (p in I, q in J) with p > q
            int inv = 0;
            for (unsigned r = mj; r; r &= r - 1) {
                const int q = std::countr_zero(r);
                inv += std::popcount(mi >> (q + 1));
            }
            const double s = (inv % 2) ? -1.0 : 1.0;
            out.coeffs[ex.index(mi | mj)] += s * a.coeffs[i] * b.coeffs[j];
        }
    }
    for (int p = 0; p <= a.m; ++p)
        for (int q = 0; q + p <= a.m; ++q)
            if ((a.degree_mask >> p & 1u) && (b.degree_mask >> q & 1u)) out.degree_mask |= 1u << (p + q);
    return out;
}

FormValue interior(const Eigen::VectorXd& X, const FormValue& a)
{
    if (X.size() != a.m) throw std::invalid_argument("vector length must equal m");
    const auto& ex = ExteriorAlgebra::of(a.m);
    FormValue out = FormValue::zero(a.m, a.frame);
    for (int d = 0; d < a.m; ++d) {
        if (X[d] == 0.0) continue;
        for (int j = 0; j < ex.size(); ++j) {
            int s = 0;
            const int t = ex.interior_target(d, j, s);
            if (t >= 0) out.coeffs[t] += X[d] * double(s) * a.coeffs[j];
        }
    }
    out.degree_mask = a.degree_mask >> 1;
    return out;
}

FormValue interior(const Eigen::MatrixXd& gx, const Eigen::VectorXd& theta, const FormValue& a)
{
    return interior(Eigen::VectorXd(gx.ldlt().solve(theta)), a);
}

Eigen::MatrixXd lambda_extend(const Eigen::MatrixXd& L)
{
    const int ro = static_cast<int>(L.rows());
    const int co = static_cast<int>(L.cols());
    const auto& eo = ExteriorAlgebra::of(ro);
    const auto& ei = ExteriorAlgebra::of(co);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(eo.size(), ei.size());
    for (int k = 0; k <= std::min(ro, co); ++k) {
        for (int I = eo.degree_offset(k); I < eo.degree_offset(k) + eo.degree_size(k); ++I) {
            for (int J = ei.degree_offset(k); J < ei.degree_offset(k) + ei.degree_size(k); ++J) {
                if (k == 0) {
                    out(I, J) = 1.0;
                    continue;
                }
                Eigen::MatrixXd sub(k, k);
                int r = 0;
                for (unsigned mi = eo.mask(I); mi; mi &= mi - 1, ++r) {
                    int c = 0;
                    for (unsigned mj = ei.mask(J); mj; mj &= mj - 1, ++c)
                        sub(r, c) = L(std::countr_zero(mi), std::countr_zero(mj));
                }
                out(I, J) = sub.determinant();
            }
        }
    }
    return out;
}

Eigen::MatrixXd lambda_gram(const Eigen::MatrixXd& gx, int k)
{
    const int m = static_cast<int>(gx.rows());
    if (k < 0 || k > m) throw std::invalid_argument("degree out of range");
    const auto& ex = ExteriorAlgebra::of(m);
    const Eigen::MatrixXd ext = lambda_extend(gx.inverse());
    const int o = ex.degree_offset(k), n = ex.degree_size(k);
    return ext.block(o, o, n, n);
}

Eigen::MatrixXd derivation_extend(const Eigen::MatrixXd& N)
{
    const int m = static_cast<int>(N.rows());
    const auto& ex = ExteriorAlgebra::of(m);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ex.size(), ex.size());
    for (const auto& t : ex.derivation_terms()) out(t.row, t.col) += t.sign * N(t.flat / m, t.flat % m);
    return out;
}

cplx pairing(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b)
{
    return (a.array() * b.array()).sum();
}

cplx inner(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b)
{
    return a.dot(b);
}

}  // namespace hodgemc
