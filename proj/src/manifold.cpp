#include "hodgemc/manifold.hpp"

#include <sstream>

namespace hodgemc {

const char* to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::euclidean: return "euclidean";
    case ModelKind::flat_torus: return "flat_torus";
    case ModelKind::sphere: return "sphere";
    case ModelKind::hyperbolic: return "hyperbolic";
    case ModelKind::conformal: return "conformal";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s)
{
    if (s == "euclidean") return ModelKind::euclidean;
    if (s == "flat_torus" || s == "torus") return ModelKind::flat_torus;
    if (s == "sphere") return ModelKind::sphere;
    if (s == "hyperbolic") return ModelKind::hyperbolic;
    if (s == "conformal" || s == "conformal-over-base") return ModelKind::conformal;
    throw ValidationError("unknown model kind '" + s + "'");
}

// ---------------------------------------------------------------- charts

void Chart::metric_derivatives(const Vec& y, MetricDerivs& dG) const
{
    if (mode == DerivMode::analytic) {
        metric_derivatives_analytic(y, dG);
        return;
    }
    const int m = dim();
    for (int k = 0; k < m; ++k) {
        Vec yp = y, ym = y;
        yp[k] += h_fd;
        ym[k] -= h_fd;
        dG[k] = (metric(yp) - metric(ym)) / (2.0 * h_fd);
    }
}

Christoffel Chart::christoffel(const Vec& y) const
{
    const int m = dim();
    MetricDerivs dG;
    metric_derivatives(y, dG);
    const Mat Ginv = metric(y).inverse();
    Christoffel out;
    out.m = m;
    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) {
            for (int k = 0; k < m; ++k) {
                double s = 0.0;
                for (int l = 0; l < m; ++l) s += Ginv(k, l) * (dG[i](l, j) + dG[j](l, i) - dG[l](i, j));
                out(k, i, j) = out(k, j, i) = 0.5 * s;
            }
        }
    }
    return out;
}

Tensor4 Chart::riemann(const Vec& y) const
{
    const int m = dim();
    const Christoffel g = christoffel(y);
    std::array<Christoffel, kMaxDim> dg;
    for (int i = 0; i < m; ++i) {
        Vec yp = y, ym = y;
        yp[i] += h_fd;
        ym[i] -= h_fd;
        const Christoffel gp = christoffel(yp), gm = christoffel(ym);
        dg[i].m = m;
        for (std::size_t t = 0; t < gp.g.size(); ++t) dg[i].g[t] = (gp.g[t] - gm.g[t]) / (2.0 * h_fd);
    }
    // R^p_{kij} = ∂_iΓ^p_{jk} − ∂_jΓ^p_{ik} + Γ^p_{iq}Γ^q_{jk} − Γ^p_{jq}Γ^q_{ik}
    Tensor4 up;
    up.m = m;
    for (int p = 0; p < m; ++p)
        for (int k = 0; k < m; ++k)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    double s = dg[i](p, j, k) - dg[j](p, i, k);
                    for (int q = 0; q < m; ++q) s += g(p, i, q) * g(q, j, k) - g(p, j, q) * g(q, i, k);
                    up(p, k, i, j) = s;
                }
    const Mat G = metric(y);
    Tensor4 r;
    r.m = m;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < m; ++k)
                for (int l = 0; l < m; ++l) {
                    double s = 0.0;
                    for (int p = 0; p < m; ++p) s += G(l, p) * up(p, k, i, j);
                    r(i, j, k, l) = s;
                }
    return r;
}

std::vector<Tensor4> Chart::nabla_riemann(const Vec& y) const
{
    const int m = dim();
    const Tensor4 r = riemann(y);
    const Christoffel g = christoffel(y);
    std::vector<Tensor4> out(m);
    for (int q = 0; q < m; ++q) {
        Vec yp = y, ym = y;
        yp[q] += h_fd;
        ym[q] -= h_fd;
        const Tensor4 rp = riemann(yp), rm = riemann(ym);
        Tensor4& d = out[q];
        d.m = m;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < m; ++k)
                    for (int l = 0; l < m; ++l) {
                        double s = (rp(i, j, k, l) - rm(i, j, k, l)) / (2.0 * h_fd);
                        for (int p = 0; p < m; ++p) {
                            s -= g(p, q, i) * r(p, j, k, l) + g(p, q, j) * r(i, p, k, l) + g(p, q, k) * r(i, j, p, l) +
                                 g(p, q, l) * r(i, j, k, p);
                        }
                        d(i, j, k, l) = s;
                    }
    }
    return out;
}

namespace {

class FlatChart final : public Chart {
public:
    explicit FlatChart(int m) : m_(m) {}
    int dim() const override { return m_; }
    Mat metric(const Vec&) const override { return Mat::Identity(m_, m_); }
    void metric_derivatives_analytic(const Vec&, MetricDerivs& dG) const override
    {
        for (int k = 0; k < m_; ++k) dG[k] = Mat::Zero(m_, m_);
    }
    Christoffel christoffel(const Vec&) const override
    {
        Christoffel c;
        c.m = m_;
        return c;
    }

private:
    int m_;
};

// Metric e^{2φ(y)} δ_ij.
class ScalarChart : public Chart {
public:
    explicit ScalarChart(int m) : m_(m) {}
    int dim() const override { return m_; }
    virtual double phi(const Vec& y) const = 0;
    virtual Vec dphi(const Vec& y) const = 0;
    Mat metric(const Vec& y) const override { return std::exp(2.0 * phi(y)) * Mat::Identity(m_, m_); }
    void metric_derivatives_analytic(const Vec& y, MetricDerivs& dG) const override
    {
        const Mat G = metric(y);
        const Vec d = dphi(y);
        for (int k = 0; k < m_; ++k) dG[k] = 2.0 * d[k] * G;
    }

protected:
    int m_;
};

class HyperbolicChart final : public ScalarChart {
public:
    HyperbolicChart(int m, double radius) : ScalarChart(m), radius_(radius) {}
    double phi(const Vec& y) const override { return std::log(radius_ / y[m_ - 1]); }
    Vec dphi(const Vec& y) const override
    {
        Vec d = Vec::Zero(m_);
        d[m_ - 1] = -1.0 / y[m_ - 1];
        return d;
    }
    bool in_domain(const Vec& y) const override { return y[m_ - 1] > 0.0; }

private:
    double radius_;
};

class StereoChart final : public ScalarChart {
public:
    StereoChart(int m, double radius) : ScalarChart(m), radius_(radius) {}
    double phi(const Vec& y) const override { return std::log(2.0 * radius_ / (1.0 + y.squaredNorm())); }
    Vec dphi(const Vec& y) const override { return -2.0 * y / (1.0 + y.squaredNorm()); }

private:
    double radius_;
};

class ConformalChart final : public Chart {
public:
    ConformalChart(const Model& base, ConformalFactor psi) : base_(base), psi_(std::move(psi)) {}
    int dim() const override { return base_.dim(); }
    Mat metric(const Vec& y) const override
    {
        return std::exp(2.0 * psi_.value(displacement(y))) * base_.chart().metric(y);
    }
    void metric_derivatives_analytic(const Vec& y, MetricDerivs& dG) const override
    {
        const Vec d = displacement(y);
        const double e = std::exp(2.0 * psi_.value(d));
        const Vec gp = psi_.gradient(d);
        const Mat G = base_.chart().metric(y);
        MetricDerivs dB;
        base_.chart().metric_derivatives(y, dB);
        for (int k = 0; k < dim(); ++k) dG[k] = e * (2.0 * gp[k] * G + dB[k]);
    }
    bool in_domain(const Vec& y) const override { return base_.chart().in_domain(y); }

private:
    Vec displacement(const Vec& y) const { return chart_displacement(base_, psi_.center, y); }
    const Model& base_;
    ConformalFactor psi_;
};

class TamperedChart final : public Chart {
public:
    explicit TamperedChart(const Chart& inner) : inner_(inner)
    {
        mode = inner.mode;
        h_fd = inner.h_fd;
    }
    int dim() const override { return inner_.dim(); }
    Mat metric(const Vec& y) const override { return inner_.metric(y); }
    void metric_derivatives_analytic(const Vec& y, MetricDerivs& dG) const override
    {
        inner_.metric_derivatives_analytic(y, dG);
    }
    bool in_domain(const Vec& y) const override { return inner_.in_domain(y); }
    Christoffel christoffel(const Vec& y) const override
    {
        Christoffel c = inner_.christoffel(y);
        const int m = c.m;
        for (int k = 0; k < m; ++k)
            for (int i = 0; i < m; ++i)
                for (int j = i + 1; j < m; ++j) c(k, i, j) = -c(k, i, j);
        return c;
    }

private:
    const Chart& inner_;
};

Tensor4 to_frame(const Tensor4& r, const Mat& E)
{
    const int m = r.m;
    Tensor4 a = r, b;
    a.m = b.m = m;
    // contract one slot at a time
    for (int slot = 0; slot < 4; ++slot) {
        for (int i0 = 0; i0 < m; ++i0)
            for (int i1 = 0; i1 < m; ++i1)
                for (int i2 = 0; i2 < m; ++i2)
                    for (int i3 = 0; i3 < m; ++i3) {
                        std::array<int, 4> idx{i0, i1, i2, i3};
                        double s = 0.0;
                        for (int p = 0; p < m; ++p) {
                            std::array<int, 4> src = idx;
                            src[slot] = p;
                            s += a(src[0], src[1], src[2], src[3]) * E(p, idx[slot]);
                        }
                        b(i0, i1, i2, i3) = s;
                    }
        a = b;
    }
    return a;
}

Tensor4 constant_curvature_tensor(int m, double K)
{
    Tensor4 r;
    r.m = m;
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
            for (int c = 0; c < m; ++c)
                for (int d = 0; d < m; ++d)
                    r(a, b, c, d) = K * (double(b == c && a == d) - double(a == c && b == d));
    return r;
}

// Geodesic Euler step in a chart with midpoint Christoffels for the frame transport.
FramePoint chart_step(const Chart& c, const FramePoint& fp, const Vec& v, double h, int depth = 0)
{
    const int m = c.dim();
    const Vec u = fp.E * v * h;
    const Christoffel g0 = c.christoffel(fp.x);
    Vec x1 = fp.x + u;
    for (int k = 0; k < m; ++k) {
        double s = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) s += g0(k, i, j) * u[i] * u[j];
        x1[k] -= 0.5 * s;
    }
    if (!c.in_domain(x1) || !x1.allFinite()) {
        if (depth >= 8) throw StepError("geodesic step left the chart domain");
        const FramePoint half = chart_step(c, fp, v, 0.5 * h, depth + 1);
        return chart_step(c, half, v, 0.5 * h, depth + 1);
    }
    const Vec xm = 0.5 * (fp.x + x1);
    const Christoffel gm = c.christoffel(xm);
    const Vec dx = x1 - fp.x;
    Mat Gam = Mat::Zero(m, m);
    for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l)
            for (int i = 0; i < m; ++i) Gam(k, l) += gm(k, i, l) * dx[i];
    Mat E1 = fp.E - Gam * fp.E;
    return {x1, orthonormalize(E1, c.metric(x1))};
}

Vec chart_exp(const Chart& c, const Vec& x0, const Vec& w0, int steps = 32)
{
    const int m = c.dim();
    auto accel = [&](const Vec& x, const Vec& w) {
        const Christoffel g = c.christoffel(x);
        Vec a = Vec::Zero(m);
        for (int k = 0; k < m; ++k)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) a[k] -= g(k, i, j) * w[i] * w[j];
        return a;
    };
    Vec x = x0, w = w0;
    const double dt = 1.0 / steps;
    for (int n = 0; n < steps; ++n) {
        const Vec k1x = w, k1w = accel(x, w);
        const Vec k2x = w + 0.5 * dt * k1w, k2w = accel(x + 0.5 * dt * k1x, k2x);
        const Vec k3x = w + 0.5 * dt * k2w, k3w = accel(x + 0.5 * dt * k2x, k3x);
        const Vec k4x = w + dt * k3w, k4w = accel(x + dt * k3x, k4x);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        w += dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        if (!c.in_domain(x)) throw StepError("geodesic left the chart domain");
    }
    return x;
}

// ---------------------------------------------------------------- models

class ChartModel : public Model {
public:
    using Model::Model;
    const Chart& chart_at(const Vec& p, Vec& y) const override
    {
        y = p;
        return chart();
    }
    Mat frame_at(const Vec& p) const override
    {
        const Mat G = chart().metric(p);
        return orthonormalize(Mat::Identity(m_, m_), G);
    }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override
    {
        return chart_step(chart(), fp, v, h);
    }
    Vec exp_map(const FramePoint& fp, const Vec& v) const override { return chart_exp(chart(), fp.x, fp.E * v); }
    bool valid_point(const Vec& p) const override { return p.size() == m_ && p.allFinite() && chart().in_domain(p); }
};

class EuclideanModel final : public ChartModel {
public:
    explicit EuclideanModel(const ModelSpec& s) : ChartModel(s), chart_(s.m) {}
    ModelKind kind() const override { return ModelKind::euclidean; }
    bool compact() const override { return false; }
    bool flat() const override { return true; }
    std::optional<double> constant_curvature() const override { return 0.0; }
    const Chart& chart() const override { return chart_; }
    Mat frame_at(const Vec&) const override { return Mat::Identity(m_, m_); }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override
    {
        return {fp.x + h * (fp.E * v), fp.E};
    }
    Vec exp_map(const FramePoint& fp, const Vec& v) const override { return fp.x + fp.E * v; }
    double distance(const Vec& p, const Vec& q) const override { return (p - q).norm(); }

private:
    FlatChart chart_;
};

class TorusModel final : public ChartModel {
public:
    explicit TorusModel(const ModelSpec& s) : ChartModel(s), chart_(s.m)
    {
        if (static_cast<int>(s.periods.size()) != s.m) throw ValidationError("flat_torus needs one period per dimension");
        for (double p : s.periods)
            if (!(p > 0.0)) throw ValidationError("torus periods must be positive");
    }
    ModelKind kind() const override { return ModelKind::flat_torus; }
    bool compact() const override { return true; }
    bool flat() const override { return true; }
    std::optional<double> constant_curvature() const override { return 0.0; }
    const Chart& chart() const override { return chart_; }
    Mat frame_at(const Vec&) const override { return Mat::Identity(m_, m_); }
    Vec wrap(Vec x) const
    {
        for (int i = 0; i < m_; ++i) {
            const double L = spec_.periods[i];
            x[i] -= L * std::floor(x[i] / L);
            if (x[i] >= L) x[i] -= L;
        }
        return x;
    }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override
    {
        return {wrap(fp.x + h * (fp.E * v)), fp.E};
    }
    Vec exp_map(const FramePoint& fp, const Vec& v) const override { return wrap(fp.x + fp.E * v); }
    double distance(const Vec& p, const Vec& q) const override { return chart_displacement(*this, p, q).norm(); }

private:
    FlatChart chart_;
};

class HyperbolicModel final : public ChartModel {
public:
    explicit HyperbolicModel(const ModelSpec& s) : ChartModel(s), chart_(s.m, s.radius)
    {
        chart_.mode = s.mode;
        chart_.h_fd = s.h_fd;
    }
    ModelKind kind() const override { return ModelKind::hyperbolic; }
    bool compact() const override { return false; }
    std::optional<double> constant_curvature() const override { return -1.0 / (spec_.radius * spec_.radius); }
    const Chart& chart() const override { return chart_; }
    double distance(const Vec& p, const Vec& q) const override
    {
        const double a = p[m_ - 1], b = q[m_ - 1];
        return spec_.radius * std::acosh(1.0 + (p - q).squaredNorm() / (2.0 * a * b));
    }

private:
    HyperbolicChart chart_;
};

class SphereModel final : public Model {
public:
    explicit SphereModel(const ModelSpec& s) : Model(s), chart_(s.m, s.radius)
    {
        chart_.mode = s.mode;
        chart_.h_fd = s.h_fd;
    }
    ModelKind kind() const override { return ModelKind::sphere; }
    int ambient_dim() const override { return m_ + 1; }
    bool compact() const override { return true; }
    std::optional<double> constant_curvature() const override { return 1.0 / (spec_.radius * spec_.radius); }

    // Stereographic projection from the pole farther away from p.
    const Chart& chart_at(const Vec& p, Vec& y) const override
    {
        const double z = p[m_];
        const double denom = z >= 0.0 ? 1.0 + z : 1.0 - z;
        y = p.head(m_) / denom;
        return chart_;
    }
    Mat frame_at(const Vec& p) const override
    {
        Mat E(m_ + 1, m_);
        int col = 0;
        for (int i = 0; i <= m_ && col < m_; ++i) {
            Vec e = Vec::Zero(m_ + 1);
            e[i] = 1.0;
            e -= p.dot(e) * p;
            for (int j = 0; j < col; ++j) e -= E.col(j).dot(e) * E.col(j);
            const double n = e.norm();
            if (n < 0.5 / std::sqrt(double(m_ + 1))) continue;
            E.col(col++) = e / n;
        }
        if (col < m_) throw ModelError("could not build a tangent frame on the sphere");
        return E;
    }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override
    {
        Vec p = fp.x + (h / spec_.radius) * (fp.E * v);
        p.normalize();
        Mat E = fp.E - p * (p.transpose() * fp.E);
        return {p, orthonormalize(E, Mat::Identity(m_ + 1, m_ + 1))};
    }
    Vec exp_map(const FramePoint& fp, const Vec& v) const override
    {
        const Vec w = fp.E * v / spec_.radius;
        const double t = w.norm();
        if (t == 0.0) return fp.x;
        return std::cos(t) * fp.x + std::sin(t) * w / t;
    }
    double distance(const Vec& p, const Vec& q) const override
    {
        return spec_.radius * std::acos(std::clamp(p.dot(q), -1.0, 1.0));
    }
    bool valid_point(const Vec& p) const override
    {
        return p.size() == m_ + 1 && std::abs(p.norm() - 1.0) < 1e-8;
    }

private:
    StereoChart chart_;
};

class ConformalModel final : public ChartModel {
public:
    ConformalModel(ModelPtr base, const ConformalFactor& psi, const ModelSpec& s)
        : ChartModel(s), base_(std::move(base)), chart_(*base_, psi)
    {
        chart_.mode = s.mode;
        chart_.h_fd = s.h_fd;
    }
    ModelKind kind() const override { return ModelKind::conformal; }
    bool compact() const override { return base_->compact(); }
    std::optional<double> constant_curvature() const override
    {
        if (spec_.psi.family == ConformalFactor::Family::constant) {
            if (auto k = base_->constant_curvature()) return *k * std::exp(-2.0 * spec_.psi.amplitude);
        }
        return std::nullopt;
    }
    bool flat() const override
    {
        return spec_.psi.family == ConformalFactor::Family::constant && base_->flat();
    }
    const Chart& chart() const override { return chart_; }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override
    {
        FramePoint out = chart_step(chart_, fp, v, h);
        if (base_->kind() == ModelKind::flat_torus) out.x = base_->exp_map(base_->frame_point(out.x), Vec::Zero(m_));
        return out;
    }
    bool has_distance() const override { return spec_.psi.family == ConformalFactor::Family::constant; }
    double distance(const Vec& p, const Vec& q) const override
    {
        if (!has_distance()) throw ModelError("no closed-form distance for a non-constant conformal factor");
        return std::exp(spec_.psi.amplitude) * base_->distance(p, q);
    }
    const Model* base_model() const override { return base_.get(); }
    double conformal_psi(const Vec& x) const override { return spec_.psi.value(displacement(x)); }
    Vec conformal_dpsi(const Vec& x) const override { return spec_.psi.gradient(displacement(x)); }

private:
    Vec displacement(const Vec& x) const { return chart_displacement(*base_, spec_.psi.center, x); }
    ModelPtr base_;
    ConformalChart chart_;
};

class TamperedModel final : public ChartModel {
public:
    explicit TamperedModel(ModelPtr inner) : ChartModel(inner->spec()), inner_(std::move(inner))
    {
        Vec y = Vec::Zero(inner_->dim());
        if (inner_->kind() == ModelKind::sphere) {
            Vec p = Vec::Zero(inner_->ambient_dim());
            p[inner_->dim()] = 1.0;
            chart_.reset(new TamperedChart(inner_->chart_at(p, y)));
        } else {
            chart_.reset(new TamperedChart(inner_->chart()));
        }
    }
    ModelKind kind() const override { return inner_->kind(); }
    int ambient_dim() const override { return inner_->ambient_dim(); }
    bool compact() const override { return inner_->compact(); }
    const Chart& chart_at(const Vec& p, Vec& y) const override
    {
        inner_->chart_at(p, y);
        return *chart_;
    }
    const Chart& chart() const override { return *chart_; }
    Mat frame_at(const Vec& p) const override { return inner_->frame_at(p); }
    FramePoint step(const FramePoint& fp, const Vec& v, double h) const override { return inner_->step(fp, v, h); }
    Vec exp_map(const FramePoint& fp, const Vec& v) const override { return inner_->exp_map(fp, v); }
    bool has_distance() const override { return inner_->has_distance(); }
    double distance(const Vec& p, const Vec& q) const override { return inner_->distance(p, q); }
    bool valid_point(const Vec& p) const override { return inner_->valid_point(p); }

private:
    ModelPtr inner_;
    std::unique_ptr<TamperedChart> chart_;
};

}  // namespace

// ---------------------------------------------------------------- conformal factor

double ConformalFactor::value(const Vec& d) const
{
    switch (family) {
    case Family::constant: return amplitude;
    case Family::gaussian: return amplitude * std::exp(-d.squaredNorm() / (width * width));
    case Family::spline: {
        const double q = d.squaredNorm() / (width * width);
        return q < 1.0 ? amplitude * std::pow(1.0 - q, 4) : 0.0;
    }
    }
    return 0.0;
}

Vec ConformalFactor::gradient(const Vec& d) const
{
    switch (family) {
    case Family::constant: return Vec::Zero(d.size());
    case Family::gaussian: return (-2.0 / (width * width)) * value(d) * d;
    case Family::spline: {
        const double q = d.squaredNorm() / (width * width);
        if (q >= 1.0) return Vec::Zero(d.size());
        return (-8.0 * amplitude * std::pow(1.0 - q, 3) / (width * width)) * d;
    }
    }
    return Vec::Zero(d.size());
}

// ---------------------------------------------------------------- model base

Model::Model(ModelSpec spec) : m_(spec.m), spec_(std::move(spec))
{
    if (m_ < 2 || m_ > kMaxDim) throw ValidationError("dimension m must be in 2..4");
    if (!(spec_.h_fd > 0.0)) throw ValidationError("h_fd must be positive");
}

const Chart& Model::chart() const
{
    throw ModelError(std::string("model '") + to_string(kind()) + "' has no global chart");
}

Tensor4 Model::riemann_in_frame(const FramePoint& fp) const
{
    if (auto k = constant_curvature()) return constant_curvature_tensor(m_, *k);
    Vec y;
    const Chart& c = chart_at(fp.x, y);
    return to_frame(c.riemann(y), fp.E);
}

std::vector<Tensor4> Model::nabla_riemann_in_frame(const FramePoint& fp) const
{
    std::vector<Tensor4> out(m_);
    for (auto& t : out) t.m = m_;
    if (constant_curvature()) return out;
    Vec y;
    const Chart& c = chart_at(fp.x, y);
    const auto nr = c.nabla_riemann(y);
    std::vector<Tensor4> framed(m_);
    for (int q = 0; q < m_; ++q) framed[q] = to_frame(nr[q], fp.E);
    for (int a = 0; a < m_; ++a)
        for (int q = 0; q < m_; ++q)
            for (std::size_t t = 0; t < out[a].v.size(); ++t) out[a].v[t] += fp.E(q, a) * framed[q].v[t];
    return out;
}

double Model::nabla_riemann_norm(const FramePoint& fp) const
{
    if (constant_curvature()) return 0.0;
    double best = 0.0;
    for (const auto& t : nabla_riemann_in_frame(fp)) best = std::max(best, t.frobenius());
    return best;
}

LMat Model::weitzenbock_at(const FramePoint& fp) const
{
    if (auto k = constant_curvature()) {
        std::call_once(weitz_once_, [&] { const_weitz_ = weitzenbock(constant_curvature_tensor(m_, *k)); });
        return const_weitz_;
    }
    return weitzenbock(riemann_in_frame(fp));
}

std::string Model::describe() const
{
    std::ostringstream os;
    os << to_string(kind()) << " m=" << m_;
    return os.str();
}

ModelPtr make_model(const ModelSpec& spec)
{
    switch (spec.kind) {
    case ModelKind::euclidean: return std::make_shared<EuclideanModel>(spec);
    case ModelKind::flat_torus: return std::make_shared<TorusModel>(spec);
    case ModelKind::sphere:
        if (!(spec.radius > 0.0)) throw ValidationError("sphere radius must be positive");
        return std::make_shared<SphereModel>(spec);
    case ModelKind::hyperbolic:
        if (!(spec.radius > 0.0)) throw ValidationError("hyperbolic radius must be positive");
        return std::make_shared<HyperbolicModel>(spec);
    case ModelKind::conformal: {
        if (!spec.base) throw ValidationError("conformal model needs a base model");
        ModelSpec b = *spec.base;
        if (b.m != spec.m) b.m = spec.m;
        return make_conformal(make_model(b), spec.psi);
    }
    }
    throw ValidationError("unknown model kind");
}

ModelPtr make_conformal(ModelPtr base, const ConformalFactor& psi)
{
    if (base->kind() == ModelKind::sphere || base->kind() == ModelKind::conformal)
        throw ValidationError("conformal base must be euclidean, flat_torus or hyperbolic");
    if (!std::isfinite(psi.amplitude) || !(psi.width > 0.0)) throw ValidationError("conformal factor needs finite amplitude and positive width");
    ModelSpec s;
    s.kind = ModelKind::conformal;
    s.m = base->dim();
    s.mode = base->spec().mode;
    s.h_fd = base->spec().h_fd;
    s.base = std::make_shared<ModelSpec>(base->spec());
    s.psi = psi;
    if (s.psi.center.size() == 0) s.psi.center = Eigen::VectorXd::Zero(s.m);
    if (s.psi.center.size() != s.m) throw ValidationError("conformal factor center must have m entries");
    return std::make_shared<ConformalModel>(std::move(base), s.psi, s);
}

ModelPtr make_tampered_model(ModelPtr inner)
{
    return std::make_shared<TamperedModel>(std::move(inner));
}

Vec chart_displacement(const Model& model, const Vec& p, const Vec& q)
{
    Vec d = q - p;
    const ModelSpec* s = &model.spec();
    if (s->kind == ModelKind::conformal && s->base) s = s->base.get();
    if (s->kind == ModelKind::flat_torus) {
        for (int i = 0; i < d.size(); ++i) {
            const double L = s->periods[i];
            d[i] -= L * std::round(d[i] / L);
        }
    }
    return d;
}

// ---------------------------------------------------------------- curvature endomorphisms

LMat weitzenbock(const Tensor4& rhat)
{
    const auto& ex = ExteriorAlgebra::of(rhat.m);
    LMat W = LMat::Zero(ex.size(), ex.size());
    for (const auto& t : ex.weitzenbock_terms()) W(t.row, t.col) += t.sign * rhat.v[t.flat];
    return W;
}

Eigen::MatrixXd ricci_in_frame(const Tensor4& rhat)
{
    const int m = rhat.m;
    Eigen::MatrixXd ric = Eigen::MatrixXd::Zero(m, m);
    for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c)
            for (int a = 0; a < m; ++a) ric(b, c) += rhat(a, b, c, a);
    return ric;
}

LMat curvature_on_forms(const Tensor4& rhat, int a, int b)
{
    // covector action (R(X,Y)ω)(Z) = −ω(R(X,Y)Z), extended as a derivation
    const int m = rhat.m;
    const auto& ex = ExteriorAlgebra::of(m);
    LMat out = LMat::Zero(ex.size(), ex.size());
    for (const auto& t : ex.derivation_terms()) {
        const int c = t.flat / m, d = t.flat % m;
        out(t.row, t.col) -= t.sign * rhat(a, b, c, d);
    }
    return out;
}

Eigen::MatrixXd weitzenbock_tilde(const Tensor4& rhat)
{
    const int m = rhat.m;
    const int n = 1 << m;
    const Eigen::MatrixXd ric = ricci_in_frame(rhat);
    const LMat W = weitzenbock(rhat);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m * n, m * n);
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
            auto blk = out.block(a * n, b * n, n, n);
            blk += ric(a, b) * Eigen::MatrixXd::Identity(n, n);
            blk -= 2.0 * Eigen::MatrixXd(curvature_on_forms(rhat, a, b));
            if (a == b) blk += Eigen::MatrixXd(W);
        }
    }
    return out;
}

Eigen::MatrixXd rho_hom(const std::vector<Tensor4>& nabla_rhat)
{
    const int m = static_cast<int>(nabla_rhat.size());
    const int n = 1 << m;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m * n, n);
    for (int a = 0; a < m; ++a) {
        auto blk = out.block(a * n, 0, n, n);
        for (int i = 0; i < m; ++i) blk += Eigen::MatrixXd(curvature_on_forms(nabla_rhat[i], i, a));
        blk += Eigen::MatrixXd(weitzenbock(nabla_rhat[a]));
    }
    return out;
}

Eigen::MatrixXd curvature_operator(const Tensor4& rhat)
{
    const int m = rhat.m;
    const auto& ex = ExteriorAlgebra::of(m);
    const int o = ex.degree_offset(2), n = ex.degree_size(2);
    Eigen::MatrixXd q(n, n);
    for (int I = 0; I < n; ++I) {
        const unsigned mi = ex.mask(o + I);
        const int a = std::countr_zero(mi), b = 31 - std::countl_zero(mi);
        for (int J = 0; J < n; ++J) {
            const unsigned mj = ex.mask(o + J);
            const int c = std::countr_zero(mj), d = 31 - std::countl_zero(mj);
            q(I, J) = rhat(a, b, d, c);
        }
    }
    return q;
}

double SymmetryReport::max() const
{
    return std::max({antisym_first, antisym_last, pair, bianchi});
}

SymmetryReport riemann_symmetries(const Tensor4& r)
{
    SymmetryReport s;
    const int m = r.m;
    double scale = std::max(1.0, r.frobenius());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < m; ++k)
                for (int l = 0; l < m; ++l) {
                    s.antisym_first = std::max(s.antisym_first, std::abs(r(i, j, k, l) + r(j, i, k, l)) / scale);
                    s.antisym_last = std::max(s.antisym_last, std::abs(r(i, j, k, l) + r(i, j, l, k)) / scale);
                    s.pair = std::max(s.pair, std::abs(r(i, j, k, l) - r(k, l, i, j)) / scale);
                    s.bianchi = std::max(s.bianchi, std::abs(r(i, j, k, l) + r(j, k, i, l) + r(k, i, j, l)) / scale);
                }
    return s;
}

CurvaturePackage curvature_package(const Model& model, const Vec& x)
{
    if (!model.valid_point(x)) throw StepError("point outside the model's chart domain");
    CurvaturePackage p;
    const Chart& c = model.chart_at(x, p.y);
    const int m = model.dim();
    p.m = m;
    p.G = c.metric(p.y);
    Eigen::LLT<Mat> llt(p.G);
    if (llt.info() != Eigen::Success || (p.G - p.G.transpose()).norm() > 1e-12 * p.G.norm())
        throw ModelError("metric is not symmetric positive definite");
    p.E = orthonormalize(Mat::Identity(m, m), p.G);
    p.gamma = c.christoffel(p.y);
    p.riemann = c.riemann(p.y);
    const Mat Ginv = p.G.inverse();
    p.ricci = Mat::Zero(m, m);
    for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k)
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < m; ++l) p.ricci(j, k) += Ginv(i, l) * p.riemann(i, j, k, l);
    p.riemann_frame = to_frame(p.riemann, p.E);
    p.weitzenbock = weitzenbock(p.riemann_frame);
    const auto nr = c.nabla_riemann(p.y);
    for (int a = 0; a < m; ++a) {
        Tensor4 acc;
        acc.m = m;
        for (int q = 0; q < m; ++q) {
            const Tensor4 f = to_frame(nr[q], p.E);
            for (std::size_t t = 0; t < acc.v.size(); ++t) acc.v[t] += p.E(q, a) * f.v[t];
        }
        p.nabla_R = std::max(p.nabla_R, acc.frobenius());
    }
    p.curvature_op = curvature_operator(p.riemann_frame);
    return p;
}

FramePoint geodesic_step(const Model& model, const FramePoint& fp, const Vec& v, double h)
{
    if (!(h > 0.0)) throw std::invalid_argument("step length must be positive");
    return model.step(fp, v, h);
}

Mat orthonormalize(const Mat& E, const Mat& G)
{
    const Mat S = E.transpose() * G * E;
    return E * spd_power(S, -0.5);
}

}  // namespace hodgemc
