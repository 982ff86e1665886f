#include "hodgemc/pair.hpp"

#include <random>

namespace hodgemc {

namespace {

Eigen::MatrixXd sym_power(const Eigen::MatrixXd& a, double p)
{
    return spd_power<Eigen::MatrixXd>(0.5 * (a + a.transpose()), p);
}

struct Basic {
    Mat G, H;
    Christoffel gg, gh;
    Vec y;
};

Basic evaluate(const Model& g_model, const Model& h_model, const Vec& x)
{
    if (g_model.dim() != h_model.dim()) throw ValidationError("metric pair needs equal dimensions");
    Basic b;
    Vec yh;
    const Chart& cg = g_model.chart_at(x, b.y);
    const Chart& ch = h_model.chart_at(x, yh);
    if ((b.y - yh).norm() > 1e-12) throw ValidationError("metric pair needs a shared chart");
    b.G = cg.metric(b.y);
    b.H = ch.metric(b.y);
    for (const Mat* M : {&b.G, &b.H}) {
        if (((*M) - M->transpose()).norm() > 1e-12 * M->norm() || Eigen::LLT<Mat>(*M).info() != Eigen::Success)
            throw ModelError("metric pair input is not symmetric positive definite");
    }
    b.gg = cg.christoffel(b.y);
    b.gh = ch.christoffel(b.y);
    return b;
}

MetricPair assemble(const Basic& b, const Vec& x, bool with_connection)
{
    MetricPair p;
    p.m = static_cast<int>(b.G.rows());
    p.x = x;
    p.y = b.y;
    p.G = b.G;
    p.H = b.H;
    p.A = b.G.inverse() * b.H;
    // A is G-self-adjoint: G^{1/2} A G^{-1/2} = G^{-1/2} H G^{-1/2}
    const Mat Gm = spd_power(b.G, -0.5);
    Eigen::SelfAdjointEigenSolver<Mat> es(Gm * b.H * Gm);
    p.eig_A = es.eigenvalues();
    if (p.eig_A.minCoeff() <= 0.0) throw ModelError("metric morphism A has non-positive spectrum");
    double det = 1.0, worst = 0.0;
    for (int i = 0; i < p.m; ++i) {
        det *= p.eig_A[i];
        worst = std::max(worst, std::abs(std::log(p.eig_A[i])));
    }
    p.rho = std::sqrt(det);
    p.delta = 2.0 * std::sinh(0.25 * p.m * worst);
    p.gram_g = lambda_extend(Eigen::MatrixXd(b.G.inverse()));
    p.gram_h = lambda_extend(Eigen::MatrixXd(b.H.inverse()));
    p.calA = p.calA_power(1.0);
    p.calA_half = p.calA_power(0.5);
    p.calA_mhalf = p.calA_power(-0.5);
    p.S = std::sqrt(p.rho) - 1.0 / std::sqrt(p.rho);
    p.S_hat = std::sqrt(p.rho) * p.calA_half - p.calA_mhalf / std::sqrt(p.rho);
    p.dnabla.m = p.m;
    for (std::size_t i = 0; i < p.dnabla.g.size(); ++i) p.dnabla.g[i] = b.gh.g[i] - b.gg.g[i];
    if (with_connection) p.delta_nabla = connection_deviation(p.dnabla, b.G);
    return p;
}

// ∇ on covector components along X: (∇_X α)_k = ∂_X α_k − Σ Γ^j_{ik} X^i α_j.
Eigen::MatrixXd coframe_connection(const Christoffel& g, const Vec& X)
{
    const int m = g.m;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m, m);
    for (int k = 0; k < m; ++k)
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < m; ++i) C(k, j) -= g(j, i, k) * X[i];
    return C;
}

}  // namespace

Eigen::MatrixXd MetricPair::calA_power(double p) const
{
    const Eigen::MatrixXd Lg = sym_power(gram_g, 0.5), Lgi = sym_power(gram_g, -0.5);
    const Eigen::MatrixXd M = Lgi * gram_h * Lgi;
    return Lgi * sym_power(M, p) * Lg;
}

double MetricPair::g_norm(const Eigen::MatrixXd& B) const
{
    const Eigen::MatrixXd Lg = sym_power(gram_g, 0.5), Lgi = sym_power(gram_g, -0.5);
    // g(α,β) = α^T Γ_g β, so the isometry to ℓ² is α ↦ Γ_g^{1/2} α
    const Eigen::MatrixXd T = Lg * B * Lgi;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(T);
    return svd.singularValues()[0];
}

double connection_deviation(const Christoffel& dnabla, const Mat& G, int iterations, double tol)
{
    const int m = dnabla.m;
    const Mat E = orthonormalize(Mat::Identity(m, m), G);
    const Mat Einv = E.transpose() * G;
    // T[a](c, b) = component c of Δ∇(e_a) e_b
    std::vector<Eigen::MatrixXd> T(m, Eigen::MatrixXd::Zero(m, m));
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
            for (int c = 0; c < m; ++c)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < m; ++j)
                        for (int k = 0; k < m; ++k) T[a](c, b) += E(i, a) * E(j, b) * Einv(c, k) * dnabla(k, i, j);

    auto op_at = [&](const Eigen::VectorXd& X) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
        for (int a = 0; a < m; ++a) M += X[a] * T[a];
        return M;
    };
    std::vector<Eigen::VectorXd> starts;
    for (int a = 0; a < m; ++a) starts.push_back(Eigen::VectorXd::Unit(m, a));
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> nd;
    for (int r = 0; r < 4; ++r) {
        Eigen::VectorXd v(m);
        for (int i = 0; i < m; ++i) v[i] = nd(rng);
        starts.push_back(v.normalized());
    }
    double best = 0.0;
    for (Eigen::VectorXd X : starts) {
        double prev = -1.0;
        for (int it = 0; it < iterations; ++it) {
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(op_at(X), Eigen::ComputeFullU | Eigen::ComputeFullV);
            const double s = svd.singularValues()[0];
            best = std::max(best, s);
            if (s == 0.0 || std::abs(s - prev) <= tol * std::max(1.0, s)) break;
            prev = s;
            const Eigen::VectorXd z = svd.matrixU().col(0), y = svd.matrixV().col(0);
            Eigen::VectorXd next(m);
            for (int a = 0; a < m; ++a) next[a] = z.dot(T[a] * y);
            if (next.norm() == 0.0) break;
            X = next.normalized();
        }
    }
    return best * best;
}

MetricPair metric_pair(const Model& g_model, const Model& h_model, const Vec& x)
{
    return assemble(evaluate(g_model, h_model, x), x, true);
}

MetricPair metric_pair_at(const Mat& G, const Mat& H)
{
    if (G.rows() != H.rows() || G.rows() != G.cols() || H.rows() != H.cols()) throw ValidationError("metric pair needs square matrices of equal size");
    Basic b;
    b.G = G;
    b.H = H;
    b.y = Vec::Zero(G.rows());
    b.gg.m = b.gh.m = static_cast<int>(G.rows());
    for (const Mat* M : {&b.G, &b.H}) {
        if (((*M) - M->transpose()).norm() > 1e-12 * M->norm() || Eigen::LLT<Mat>(*M).info() != Eigen::Success)
            throw ModelError("metric pair input is not symmetric positive definite");
    }
    return assemble(b, b.y, false);
}

Eigen::MatrixXd connection_difference_on_forms(const MetricPair& pair, const Vec& X)
{
    return derivation_extend(coframe_connection(pair.dnabla, X));
}

SinhBound sinh_bound_check(const MetricPair& pair)
{
    SinhBound r;
    const Eigen::MatrixXd Lgi = sym_power(pair.gram_g, -0.5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Lgi * pair.gram_h * Lgi);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double mu = pair.rho * es.eigenvalues()[i];
        r.sigma_max_Shat = std::max(r.sigma_max_Shat, std::abs(2.0 * std::sinh(0.5 * std::log(mu))));
    }
    r.abs_S = std::abs(pair.S);
    r.bound = pair.delta;
    const double slack = 1e-12 * std::max(1.0, r.bound);
    r.holds = std::max(r.abs_S, r.sigma_max_Shat) <= r.bound + slack;
    return r;
}

Eigen::MatrixXd covariant_derivative_calA(const Model& g_model, const Model& h_model, const Vec& x, const Vec& X,
                                          double p, double h)
{
    const Basic b0 = evaluate(g_model, h_model, x);
    const Vec xp = x + h * X, xm = x - h * X;
    if (!g_model.valid_point(xp) || !g_model.valid_point(xm)) throw StepError("difference stencil leaves the chart");
    const Eigen::MatrixXd Bp = assemble(evaluate(g_model, h_model, xp), xp, false).calA_power(p);
    const Eigen::MatrixXd Bm = assemble(evaluate(g_model, h_model, xm), xm, false).calA_power(p);
    const Eigen::MatrixXd B0 = assemble(b0, x, false).calA_power(p);
    const Eigen::MatrixXd C = derivation_extend(coframe_connection(b0.gg, X));
    return (Bp - Bm) / (2.0 * h) + C * B0 - B0 * C;
}

JacobiResult jacobi_dlogrho(const Model& g_model, const Model& h_model, const Vec& x, const Vec& X)
{
    if (X.norm() == 0.0) throw std::invalid_argument("direction must be nonzero");
    const Basic b = evaluate(g_model, h_model, x);
    const int m = static_cast<int>(b.G.rows());
    Vec y;
    const Chart& cg = g_model.chart_at(x, y);
    const Chart& ch = h_model.chart_at(x, y);
    MetricDerivs dG, dH;
    cg.metric_derivatives(b.y, dG);
    ch.metric_derivatives(b.y, dH);
    const Mat Gi = b.G.inverse();
    const Mat A = Gi * b.H;
    Mat dA = Mat::Zero(m, m);
    for (int k = 0; k < m; ++k) dA += X[k] * (-Gi * dG[k] * Gi * b.H + Gi * dH[k]);
    Mat Gam = Mat::Zero(m, m);
    for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l)
            for (int i = 0; i < m; ++i) Gam(k, l) += b.gg(k, i, l) * X[i];
    const Mat nablaA = dA + Gam * A - A * Gam;
    const double tr = (A.inverse() * nablaA).trace();

    JacobiResult r;
    r.d_detA = A.determinant() * tr;
    r.dlog_rho = 0.5 * tr;
    const double Xg = std::sqrt(X.dot(b.G * X));
    const MetricPair p = assemble(b, x, false);
    const Eigen::MatrixXd dcalA = covariant_derivative_calA(g_model, h_model, x, X / Xg, 1.0, 1e-5);
    const double cm = 0.5 * std::pow(2.0, 0.5 * m);
    r.bound_rhs = cm * p.g_norm(p.calA_power(-1.0)) * p.g_norm(dcalA);
    r.holds = std::abs(r.dlog_rho) <= r.bound_rhs * Xg * (1.0 + 1e-6) + 1e-10;
    return r;
}

FormValue identification_apply(const MetricPair& pair, const FormValue& alpha, Identification which)
{
    if (alpha.m != pair.m) throw std::invalid_argument("form dimension mismatch");
    if (alpha.frame != FrameTag::coordinate) throw std::invalid_argument("identification acts on coordinate-frame forms");
    FormValue out = alpha;
    if (which == Identification::I)
        out.coeffs = pair.calA_mhalf.cast<cplx>() * alpha.coeffs;
    else
        out.coeffs = (pair.rho * pair.calA_half).cast<cplx>() * alpha.coeffs;
    return out;
}

}  // namespace hodgemc
