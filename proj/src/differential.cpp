#include "hodgemc/differential.hpp"

namespace hodgemc {

FormValue covariant_partial(const Chart& chart, const FormField& field, const Vec& y, int i, double h)
{
    const int m = chart.dim();
    Vec yp = y, ym = y;
    yp[i] += h;
    ym[i] -= h;
    if (!chart.in_domain(yp) || !chart.in_domain(ym)) throw StepError("difference stencil leaves the chart");
    const FormValue a0 = field(y);
    if (a0.frame != FrameTag::coordinate) throw std::invalid_argument("form fields must use coordinate components");
    FormValue out = field(yp) - field(ym);
    out *= cplx(1.0 / (2.0 * h));
    const Christoffel g = chart.christoffel(y);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m, m);
    for (int k = 0; k < m; ++k)
        for (int j = 0; j < m; ++j) C(k, j) = -g(j, i, k);
    out.coeffs += derivation_extend(C).cast<cplx>() * a0.coeffs;
    out.degree_mask = a0.degree_mask;
    return out;
}

FormValue numeric_d(const Model& model, const FormField& field, const Vec& x)
{
    Vec y;
    const Chart& c = model.chart_at(x, y);
    const int m = model.dim();
    const double h = model.spec().h_fd;
    FormValue out = FormValue::zero(m, FrameTag::coordinate);
    std::uint32_t mask = 0;
    for (int i = 0; i < m; ++i) {
        const FormValue di = covariant_partial(c, field, y, i, h);
        out += wedge(FormValue::covector(m, i, FrameTag::coordinate), di);
        mask = di.degree_mask;
    }
    out.degree_mask = (mask << 1) & ((2u << m) - 1u);
    return out;
}

FormValue numeric_delta(const Model& model, const FormField& field, const Vec& x)
{
    Vec y;
    const Chart& c = model.chart_at(x, y);
    const int m = model.dim();
    const double h = model.spec().h_fd;
    const Mat Gi = c.metric(y).inverse();
    FormValue out = FormValue::zero(m, FrameTag::coordinate);
    std::uint32_t mask = 0;
    for (int j = 0; j < m; ++j) {
        const FormValue dj = covariant_partial(c, field, y, j, h);
        mask = dj.degree_mask;
        Eigen::VectorXd X(m);
        for (int i = 0; i < m; ++i) X[i] = Gi(i, j);
        out += cplx(-1.0) * interior(X, dj);
    }
    out.degree_mask = mask >> 1;
    return out;
}

FormValue to_orthonormal(const Mat& E, const FormValue& alpha)
{
    if (alpha.frame != FrameTag::coordinate) throw std::invalid_argument("expected coordinate components");
    FormValue out = alpha;
    out.coeffs = lambda_extend(Eigen::MatrixXd(E.transpose())).cast<cplx>() * alpha.coeffs;
    out.frame = FrameTag::orthonormal;
    return out;
}

FormValue to_coordinate(const Mat& E, const FormValue& alpha)
{
    if (alpha.frame != FrameTag::orthonormal) throw std::invalid_argument("expected orthonormal components");
    FormValue out = alpha;
    out.coeffs = lambda_extend(Eigen::MatrixXd(E.transpose().inverse())).cast<cplx>() * alpha.coeffs;
    out.frame = FrameTag::coordinate;
    return out;
}

ConformalRules conformal_rules(const Model& model, const Vec& x, const FormField& alpha, int k)
{
    const Model* base = model.base_model();
    if (model.kind() != ModelKind::conformal || !base) throw ValidationError("conformal rules need a conformal model");
    const int m = model.dim();
    if (k < 0 || k > m) throw std::invalid_argument("degree out of range");
    ConformalRules r;
    r.psi = model.conformal_psi(x);
    r.inner_scale = std::exp(-2.0 * k * r.psi);
    r.vol_factor = std::exp(m * r.psi);
    r.istar_factor = std::exp((m - k) * r.psi);
    const FormValue dg = numeric_delta(*base, alpha, x);
    Vec y;
    const Mat G = base->chart_at(x, y).metric(y);
    const Vec dpsi = model.conformal_dpsi(x);
    const Eigen::VectorXd grad = G.ldlt().solve(dpsi);
    FormValue corr = interior(grad, alpha(y));
    corr *= cplx(-(m - 2.0 * k));
    r.delta_psi = dg + corr;
    r.delta_psi *= cplx(std::exp(-2.0 * r.psi));
    return r;
}

}  // namespace hodgemc
