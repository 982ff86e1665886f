#include "hodgemc/bounds.hpp"

#include "hodgemc/differential.hpp"
#include "hodgemc/pair.hpp"
#include "hodgemc/parallel.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <numbers>
#include <sstream>

namespace hodgemc {

namespace {

constexpr double kPi = std::numbers::pi;

double neg(double v) { return std::max(0.0, -v); }

double halton(std::size_t i, int base)
{
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

struct BlockSpectrum {
    std::vector<double> lo, hi;
};

BlockSpectrum block_spectrum(const LMat& W, int m)
{
    const ExteriorAlgebra& ext = ExteriorAlgebra::of(m);
    BlockSpectrum b;
    for (int k = 0; k <= m; ++k) {
        const int off = ext.degree_offset(k), n = ext.degree_size(k);
        const Eigen::MatrixXd blk = W.block(off, off, n, n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (blk + blk.transpose()), Eigen::EigenvaluesOnly);
        b.lo.push_back(es.eigenvalues().minCoeff());
        b.hi.push_back(es.eigenvalues().maxCoeff());
    }
    return b;
}

bool homogeneous(const Model& model)
{
    if (!model.constant_curvature()) return false;
    const ModelKind k = model.kind();
    return k != ModelKind::conformal || model.spec().psi.family == ConformalFactor::Family::constant;
}

const Model& underlying(const Model& model)
{
    const Model* b = model.base_model();
    return b ? *b : model;
}

// Heat kernel of ½Δ at the diagonal on the hyperbolic plane of curvature −1.
double hyperbolic_plane_diag(double s)
{
    const double t = 0.5 * s;
    boost::math::quadrature::exp_sinh<double> integrator;
    auto f = [t](double r) {
        if (r == 0.0) return std::sqrt(2.0);
        const double sh = std::sinh(0.5 * r);
        if (!std::isfinite(sh)) return 0.0;
        return r * std::exp(-r * r / (4.0 * t)) / (std::sqrt(2.0) * sh);
    };
    const double I = integrator.integrate(f);
    return std::sqrt(2.0) * std::exp(-t / 4.0) / std::pow(4.0 * kPi * t, 1.5) * I;
}

PhiValue torus_phi(const std::vector<double>& periods, double s)
{
    PhiValue out;
    out.method = "wrapped-gaussian";
    double value = 1.0, tail = 0.0;
    bool fourier = false;
    for (double L : periods) {
        double sum = 0.0, last = 0.0;
        if (2.0 * kPi * kPi * s / (L * L) >= 1.0) {
            fourier = true;
            const double a = 2.0 * kPi * kPi * s / (L * L);
            sum = 1.0 / L;
            for (int k = 1; k < 10000; ++k) {
                last = 2.0 * std::exp(-a * k * k) / L;
                sum += last;
                if (last < 1e-16 * sum) break;
            }
        } else {
            const double c = 1.0 / std::sqrt(2.0 * kPi * s);
            sum = c;
            for (int n = 1; n < 10000; ++n) {
                last = 2.0 * c * std::exp(-0.5 * (n * L) * (n * L) / s);
                sum += last;
                if (last < 1e-16 * sum) break;
            }
        }
        value *= sum;
        tail = std::max(tail, last / sum);
    }
    if (fourier) out.method = "fourier";
    out.value = value;
    out.tail = tail * value;
    if (out.tail > 1e-12 * value) throw NumericalError("torus heat kernel series did not reach its tail tolerance");
    return out;
}

PhiValue sphere_phi(int m, double R, double s)
{
    PhiValue out;
    out.method = "spectral";
    const double vol = 2.0 * std::pow(kPi, 0.5 * (m + 1)) / std::tgamma(0.5 * (m + 1)) * std::pow(R, m);
    auto binom = [](double n, int k) {
        if (n < k) return 0.0;
        double r = 1.0;
        for (int i = 1; i <= k; ++i) r *= (n - k + i) / i;
        return r;
    };
    auto term = [&](int l) {
        const double dim = binom(l + m, m) - binom(l + m - 2, m);
        return dim * std::exp(-0.5 * l * (l + m - 1) * s / (R * R));
    };
    double head = 0.0;
    for (int l = 0; l < 64; ++l) head += term(l);
    double tail = 0.0;
    for (int l = 64; l < 200000; ++l) {
        const double t = term(l);
        tail += t;
        if (t < 1e-18 * head) break;
    }
    out.value = (head + tail) / vol;
    out.tail = tail / vol;
    return out;
}

PhiValue base_phi(const Model& model, double s)
{
    const int m = model.dim();
    const ModelSpec& sp = model.spec();
    PhiValue out;
    switch (model.kind()) {
    case ModelKind::euclidean:
        out.method = "closed-form";
        out.value = std::pow(2.0 * kPi * s, -0.5 * m);
        return out;
    case ModelKind::flat_torus:
        return torus_phi(sp.periods, s);
    case ModelKind::sphere:
        return sphere_phi(m, sp.radius, s);
    case ModelKind::hyperbolic: {
        const double R = sp.radius, t = s / (R * R);
        out.method = "closed-form";
        if (m == 3) {
            out.value = std::pow(2.0 * kPi * t, -1.5) * std::exp(-0.5 * t) / (R * R * R);
        } else if (m == 2) {
            out.method = "quadrature";
            out.value = hyperbolic_plane_diag(t) / (R * R);
        } else {
            throw ModelError("no heat kernel bound for the hyperbolic space of dimension " + std::to_string(m));
        }
        return out;
    }
    default:
        throw ModelError(std::string("no heat kernel bound for model kind ") + to_string(model.kind()));
    }
}

// Chart-box layout for the criterion and L² quadratures.
struct Box {
    int m = 0;
    bool compact = false;
    Vec lo, hi;
    int log_axis = -1;  // hyperbolic height axis is gridded in log y

    Vec point(const Vec& u) const
    {
        Vec y = u;
        if (log_axis >= 0) y[log_axis] = std::exp(u[log_axis]);
        return y;
    }
    double jacobian(const Vec& u) const { return log_axis >= 0 ? std::exp(u[log_axis]) : 1.0; }
};

struct Cells {
    std::vector<int> n;
    Vec width;
    std::size_t count() const
    {
        std::size_t c = 1;
        for (int v : n) c *= static_cast<std::size_t>(v);
        return c;
    }
};

Cells make_cells(const Box& b, double cell)
{
    Cells c;
    c.width = Vec::Zero(b.m);
    for (int i = 0; i < b.m; ++i) {
        const double L = b.hi[i] - b.lo[i];
        c.n.push_back(std::max(1, static_cast<int>(std::ceil(L / cell - 1e-9))));
        c.width[i] = L / c.n.back();
    }
    return c;
}

Vec cell_center(const Box& b, const Cells& c, std::size_t idx, std::vector<int>* multi = nullptr)
{
    Vec u(b.m);
    for (int i = 0; i < b.m; ++i) {
        const int j = static_cast<int>(idx % c.n[i]);
        idx /= c.n[i];
        if (multi) (*multi)[i] = j;
        u[i] = b.lo[i] + (j + 0.5) * c.width[i];
    }
    return u;
}

bool on_boundary(const std::vector<int>& j, const Cells& c)
{
    for (std::size_t i = 0; i < j.size(); ++i)
        if (j[i] == 0 || j[i] == c.n[i] - 1) return true;
    return false;
}

Vec default_center(const Model& g, const Model& h)
{
    const int m = g.dim();
    for (const Model* mod : {&g, &h}) {
        if (mod->kind() == ModelKind::conformal && mod->spec().psi.center.size() == m)
            return Vec(mod->spec().psi.center);
    }
    Vec c = Vec::Zero(m);
    if (underlying(g).kind() == ModelKind::hyperbolic) c[m - 1] = 1.0;
    return c;
}

Box make_box(const Model& g, const Vec& center, double half_width)
{
    const Model& base = underlying(g);
    Box b;
    b.m = g.dim();
    b.lo = Vec::Zero(b.m);
    b.hi = Vec::Zero(b.m);
    switch (base.kind()) {
    case ModelKind::flat_torus:
        b.compact = true;
        for (int i = 0; i < b.m; ++i) b.hi[i] = base.spec().periods[i];
        return b;
    case ModelKind::euclidean:
        for (int i = 0; i < b.m; ++i) {
            b.lo[i] = center[i] - half_width;
            b.hi[i] = center[i] + half_width;
        }
        return b;
    case ModelKind::hyperbolic:
        for (int i = 0; i < b.m; ++i) {
            const double c = i == b.m - 1 ? std::log(center[i]) : center[i];
            b.lo[i] = c - half_width;
            b.hi[i] = c + half_width;
        }
        b.log_axis = b.m - 1;
        return b;
    default:
        throw ModelError("criterion quadrature needs a global chart (euclidean, torus or hyperbolic base)");
    }
}

double volume_density(const Model& model, const Vec& y)
{
    return std::sqrt(model.chart().metric(y).determinant());
}

}  // namespace

// ------------------------------------------------------------------ constants

double Constants::D(double s) const
{
    require();
    if (!(s > 0.0)) throw ValidationError("s must be positive");
    return c_gamma + std::log(gamma * std::pow(c_q, 1.0 / q)) / s;
}

double Constants::C(int m, double Kminus) const
{
    return kPi / (2.0 * R) * std::sqrt((m - 1) * std::max(0.0, Kminus)) + kPi * kPi / (4.0 * R * R) * (m + q + 3.0);
}

void Constants::require() const
{
    if (!resolved) throw ValidationError("constants ledger is not resolved (c_gamma missing)");
}

Constants Constants::declared(double c_gamma)
{
    if (!(c_gamma >= 0.0) || !std::isfinite(c_gamma)) throw ValidationError("c_gamma must be finite and non-negative");
    Constants c;
    c.c_gamma = c_gamma;
    c.resolved = true;
    c.source = "declared";
    return c;
}

void to_json(nlohmann::json& j, const Constants& c)
{
    j = nlohmann::json{{"gamma", c.gamma}, {"c_gamma", c.c_gamma}, {"q", c.q}, {"c_q", c.c_q},
                       {"R", c.R},         {"resolved", c.resolved}, {"source", c.source}};
    if (c.verdict) j["kato_verdict"] = to_string(*c.verdict);
}

double weitzenbock_negative_part(const Model& model, const Vec& p)
{
    const LMat W = model.weitzenbock_at(model.frame_point(p));
    Eigen::SelfAdjointEigenSolver<LMat> es(W, Eigen::EigenvaluesOnly);
    return neg(es.eigenvalues().minCoeff());
}

Constants resolve_constants(const Model& model, const KatoOptions& kato)
{
    Constants c;
    if (homogeneous(model)) {
        // ∫|w| is deterministic; E e^{∫w} = e^{w t} ≤ γ e^{t w} for every t, and no smaller rate works.
        const Vec x = model.kind() == ModelKind::sphere ? Vec(Vec::Unit(model.dim() + 1, model.dim()))
                                                        : (kato.x_samples.empty() ? default_center(model, model)
                                                                                  : kato.x_samples.front());
        c.c_gamma = weitzenbock_negative_part(model, x);
        c.verdict = KatoVerdict::kato;
        c.source = "closed-form";
    } else {
        const KatoReport rep = kato_test(model, [&](const Vec& p) { return weitzenbock_negative_part(model, p); }, kato);
        c.c_gamma = rep.c_gamma;
        c.gamma = rep.gamma;
        c.verdict = rep.verdict;
        c.source = "kato-test";
    }
    c.resolved = true;
    return c;
}

// ------------------------------------------------------------------ local curvature

std::vector<Vec> ball_sample(const Model& model, const Vec& x, int n)
{
    if (n < 1) throw ValidationError("ball sample needs at least one point");
    const int m = model.dim();
    static constexpr int primes[kMaxDim] = {2, 3, 5, 7};
    const FramePoint fp = model.frame_point(x);
    std::vector<Vec> pts{x};
    for (std::size_t i = 1; static_cast<int>(pts.size()) < n; ++i) {
        Vec v(m);
        for (int a = 0; a < m; ++a) v[a] = 2.0 * halton(i, primes[a]) - 1.0;
        if (v.squaredNorm() >= 1.0) continue;
        pts.push_back(model.exp_map(fp, v));
    }
    return pts;
}

LocalCurvature local_K(const Model& model, const Vec& x, int n_ball)
{
    const int m = model.dim();
    LocalCurvature lk;
    lk.m = m;
    lk.Kbar_k.assign(m + 1, -std::numeric_limits<double>::infinity());
    lk.Kunder_k.assign(m + 1, std::numeric_limits<double>::infinity());
    lk.gallot_meyer_slack = std::numeric_limits<double>::infinity();
    const bool homog = homogeneous(model);
    const std::vector<Vec> pts = homog ? std::vector<Vec>{x} : ball_sample(model, x, n_ball);
    for (const Vec& p : pts) {
        const FramePoint fp = model.frame_point(p);
        const Tensor4 rhat = model.riemann_in_frame(fp);
        const BlockSpectrum b = block_spectrum(model.weitzenbock_at(fp), m);
        double Ky = 0.0;
        if (m >= 2) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(curvature_operator(rhat), Eigen::EigenvaluesOnly);
            Ky = neg(es.eigenvalues().minCoeff());
        }
        for (int k = 0; k <= m; ++k) {
            lk.Kbar_k[k] = std::max(lk.Kbar_k[k], b.hi[k]);
            lk.Kunder_k[k] = std::min(lk.Kunder_k[k], b.lo[k]);
            lk.gallot_meyer_slack = std::min(lk.gallot_meyer_slack, b.lo[k] + Ky * k * (m - k));
        }
        if (!homog) lk.nabla_R = std::max(lk.nabla_R, model.nabla_riemann_norm(fp));
    }
    lk.Kbar = *std::max_element(lk.Kbar_k.begin(), lk.Kbar_k.end());
    lk.Kunder = *std::min_element(lk.Kunder_k.begin(), lk.Kunder_k.end());
    lk.points = static_cast<int>(pts.size());
    return lk;
}

namespace {

double psi_formula(int m, double Kbar, double Kunder, double s, const Constants& c)
{
    if (!(s > 0.0)) throw ValidationError("s must be positive");
    const double expo = c.D(s) * s +
                        (kPi * std::sqrt((m - 1) * neg(Kunder)) + kPi * kPi * (m + 5) + neg(Kbar + Kunder)) * s / 2.0;
    return std::exp(expo) / std::sqrt(s);
}

}  // namespace

double psi(const LocalCurvature& lk, double s, const Constants& c)
{
    return psi_formula(lk.m, lk.Kbar, lk.Kunder, s, c);
}

double psi_k(const LocalCurvature& lk, int k, int sign, double s, const Constants& c)
{
    const int j = k + (sign > 0 ? 1 : -1);
    if (k < 0 || k > lk.m || j < 0 || j > lk.m) throw ValidationError("degree pair out of range");
    const double Ku = std::min(lk.Kunder_k[k], lk.Kunder_k[j]);
    const double expo = c.D(s) * s + (kPi * std::sqrt((lk.m - 1) * neg(Ku)) + kPi * kPi * (lk.m + 5) +
                                      neg(lk.Kbar_k[k] + lk.Kunder_k[j])) *
                                         s / 2.0;
    return std::exp(expo) / std::sqrt(s);
}

double psi_k(const LocalCurvature& lk, int k, double s, const Constants& c)
{
    double best = std::numeric_limits<double>::infinity();
    if (k + 1 <= lk.m) best = std::min(best, psi_k(lk, k, +1, s, c));
    if (k - 1 >= 0) best = std::min(best, psi_k(lk, k, -1, s, c));
    if (!std::isfinite(best)) throw ValidationError("degree out of range");
    return best;
}

double xi(const LocalCurvature& lk, double s, const Constants& c)
{
    const double p = psi(lk, s, c);
    return p + std::pow(s, -1.5) * p * lk.nabla_R;
}

double theta(const LocalCurvature& lk) { return (1.0 + lk.nabla_R) * (1.0 + lk.nabla_R); }

double psi(const Model& model, const Vec& x, double s, const Constants& c) { return psi(local_K(model, x), s, c); }
double xi(const Model& model, const Vec& x, double s, const Constants& c) { return xi(local_K(model, x), s, c); }
double theta(const Model& model, const Vec& x) { return theta(local_K(model, x)); }

// ------------------------------------------------------------------ heat kernel bound

PhiValue phi(const Model& model, const Vec& x, double s)
{
    if (!(s > 0.0)) throw ValidationError("s must be positive");
    if (!model.valid_point(x)) throw ValidationError("point is not on the model");
    if (model.kind() != ModelKind::conformal) return base_phi(model, s);
    const Model& base = *model.base_model();
    const double C = std::exp(2.0 * model.spec().psi.sup_abs());
    PhiValue b = base_phi(base, s / C);
    const double scale = std::pow(C, 0.5 * model.dim());
    b.value *= scale;
    b.tail *= scale;
    b.upper_envelope = true;
    b.method = "quasi-isometry-envelope(" + b.method + ")";
    return b;
}

// ------------------------------------------------------------------ criterion

namespace {

struct CriterionContext {
    const Model& g;
    const Model& h;
    double s;
    const QuadSpec& q;
    const Constants& cg;
    const Constants& ch;
    double phi_g, phi_h;
};

CriterionNode evaluate_node(const CriterionContext& ctx, const Box& box, const Vec& u, double cell_volume,
                            int level)
{
    CriterionNode n;
    n.level = level;
    n.y = box.point(u);
    const MetricPair pair = metric_pair(ctx.g, ctx.h, n.y);
    const double C = ctx.q.quasi_isometry;
    if (pair.eig_A.minCoeff() < (1.0 - 1e-9) / C || pair.eig_A.maxCoeff() > C * (1.0 + 1e-9))
        throw ValidationError("metrics violate the declared quasi-isometry constant");
    n.delta = pair.delta;
    n.delta_nabla = pair.delta_nabla;
    if (!std::isfinite(n.delta_nabla) ||
        (ctx.q.delta_nabla_bound > 0.0 && n.delta_nabla > ctx.q.delta_nabla_bound))
        throw ValidationError("connection deviation exceeds its declared bound");
    n.K_g = local_K(ctx.g, n.y, ctx.q.n_ball);
    n.K_h = &ctx.g == &ctx.h ? n.K_g : local_K(ctx.h, n.y, ctx.q.n_ball);
    n.psi_g = psi(n.K_g, ctx.s, ctx.cg);
    n.psi_h = psi(n.K_h, ctx.s, ctx.ch);
    n.xi_g = xi(n.K_g, ctx.s, ctx.cg);
    n.theta_g = theta(n.K_g);
    n.theta_h = theta(n.K_h);
    n.phi_g = ctx.phi_g;
    n.phi_h = ctx.phi_h;
    const double common = std::max(n.delta, n.delta_nabla + n.xi_g);
    n.integrand_g = std::max(common, n.psi_g) * n.phi_g;
    n.integrand_h = std::max(common, n.psi_h) * n.phi_h;
    const double jac = box.jacobian(u) * cell_volume;
    n.weight_g = std::sqrt(pair.G.determinant()) * jac;
    n.weight_h = std::sqrt(pair.H.determinant()) * jac;
    if (!std::isfinite(n.integrand_g) || !std::isfinite(n.integrand_h) || !std::isfinite(n.weight_g) ||
        !std::isfinite(n.weight_h))
        throw NumericalError("criterion integrand is not finite at a quadrature node");
    return n;
}

std::vector<CriterionNode> evaluate_level(const CriterionContext& ctx, const Box& box, double cell, int level,
                                          bool boundary_only)
{
    const Cells cells = make_cells(box, cell);
    double cell_volume = 1.0;
    for (int i = 0; i < box.m; ++i) cell_volume *= cells.width[i];
    std::vector<std::size_t> idx;
    std::vector<int> multi(box.m);
    for (std::size_t i = 0; i < cells.count(); ++i) {
        cell_center(box, cells, i, &multi);
        if (!boundary_only || on_boundary(multi, cells)) idx.push_back(i);
    }
    std::vector<CriterionNode> out(idx.size());
    parallel_for(idx.size(), ctx.q.workers, [&](std::size_t i) {
        out[i] = evaluate_node(ctx, box, cell_center(box, cells, idx[i]), cell_volume, level);
    });
    return out;
}

void finish_branch(CriterionBranch& br, bool compact)
{
    const bool finite = std::all_of(br.integral.begin(), br.integral.end(), [](double v) { return std::isfinite(v); });
    if (br.integral.size() >= 2) {
        const double a = br.integral[br.integral.size() - 2], b = br.integral.back();
        br.relative_change = std::abs(b - a) / std::max(std::abs(b), std::numeric_limits<double>::min());
    }
    br.stable = br.relative_change <= 0.05;
    br.verdict = finite && (compact || br.converged) ? "finite" : "divergent-at-resolution";
}

}  // namespace

BoundReport criterion_integral(const Model& g, const Model& h, double s, const QuadSpec& q, const Constants& cg,
                               const Constants& ch)
{
    if (!(s > 0.0)) throw ValidationError("s must be positive");
    if (!(q.quasi_isometry >= 1.0)) throw ValidationError("quasi-isometry constant must be declared (>= 1)");
    if (!(q.cell > 0.0) || !(q.half_width > 0.0) || q.max_half_width < q.half_width)
        throw ValidationError("invalid quadrature box settings");
    if (g.dim() != h.dim()) throw ValidationError("criterion needs metrics of equal dimension");
    cg.require();
    ch.require();

    BoundReport r;
    r.s = s;
    r.m = g.dim();
    r.g_model = g.describe();
    r.h_model = h.describe();
    r.constants_g = cg;
    r.constants_h = ch;
    r.quasi_isometry = q.quasi_isometry;
    const Vec center = q.center.size() == g.dim() ? q.center : default_center(g, h);
    r.phi_g = phi(g, center, s);
    r.phi_h = phi(h, center, s);
    const CriterionContext ctx{g, h, s, q, cg, ch, r.phi_g.value, r.phi_h.value};
    {
        const LocalCurvature kg = local_K(g, center, q.n_ball), kh = local_K(h, center, q.n_ball);
        r.C_g = cg.C(r.m, neg(kg.Kunder));
        r.C_h = ch.C(r.m, neg(kh.Kunder));
    }

    Box box = make_box(g, center, q.half_width);
    if (!box.compact) {
        // Grow the box until the boundary mass density of each branch drops below the tolerance.
        double W = q.half_width;
        for (;;) {
            box = make_box(g, center, W);
            const std::vector<CriterionNode> shell = evaluate_level(ctx, box, q.cell, 0, true);
            const Cells c = make_cells(box, q.cell);
            double cv = 1.0;
            for (int i = 0; i < box.m; ++i) cv *= c.width[i];
            double env_g = 0.0, env_h = 0.0;
            for (const CriterionNode& n : shell) {
                env_g = std::max(env_g, n.integrand_g * n.weight_g / cv);
                env_h = std::max(env_h, n.integrand_h * n.weight_h / cv);
            }
            r.branch_g.tail_history.emplace_back(W, env_g);
            r.branch_h.tail_history.emplace_back(W, env_h);
            r.branch_g.converged = env_g < q.tail_tol;
            r.branch_h.converged = env_h < q.tail_tol;
            if ((r.branch_g.converged && r.branch_h.converged) || 2.0 * W > q.max_half_width) break;
            W *= 2.0;
        }
        // A divergent branch is integrated on the initial box only, as a partial value.
        if (!r.branch_g.converged && !r.branch_h.converged) box = make_box(g, center, q.half_width);
    }
    r.branch_g.box_half_width = r.branch_h.box_half_width = box.compact ? 0.0 : 0.5 * (box.hi[0] - box.lo[0]);

    for (int level = 0; level < 2; ++level) {
        std::vector<CriterionNode> nodes = evaluate_level(ctx, box, q.cell / (1 << level), level, false);
        double Ig = 0.0, Ih = 0.0;
        for (const CriterionNode& n : nodes) {
            Ig += n.integrand_g * n.weight_g;
            Ih += n.integrand_h * n.weight_h;
            r.delta_nabla_max = std::max(r.delta_nabla_max, n.delta_nabla);
        }
        r.branch_g.integral.push_back(Ig);
        r.branch_h.integral.push_back(Ih);
        for (CriterionNode& n : nodes) r.nodes.push_back(std::move(n));
    }
    finish_branch(r.branch_g, box.compact);
    finish_branch(r.branch_h, box.compact);
    const bool fin_g = r.branch_g.verdict == "finite", fin_h = r.branch_h.verdict == "finite";
    r.verdict = fin_g || fin_h ? "finite" : "divergent-at-resolution";
    r.refinement_flag = (fin_g && !r.branch_g.stable) || (fin_h && !r.branch_h.stable);
    return r;
}

namespace {

nlohmann::json branch_json(const CriterionBranch& b)
{
    nlohmann::json tails = nlohmann::json::array();
    for (const auto& [w, e] : b.tail_history) tails.push_back({{"half_width", w}, {"envelope", e}});
    return {{"integral", b.integral},
            {"relative_change", b.relative_change},
            {"refinement_tolerance", 0.05},
            {"stable", b.stable},
            {"tail_converged", b.converged},
            {"box_half_width", b.box_half_width},
            {"tail_history", tails},
            {"verdict", b.verdict}};
}

nlohmann::json phi_json(const PhiValue& p)
{
    return {{"value", p.value}, {"tail", p.tail}, {"upper_envelope", p.upper_envelope}, {"method", p.method}};
}

}  // namespace

void to_json(nlohmann::json& j, const BoundReport& r)
{
    j = nlohmann::json{{"kind", "criterion"},
                       {"s", r.s},
                       {"m", r.m},
                       {"g_model", r.g_model},
                       {"h_model", r.h_model},
                       {"constants_g", r.constants_g},
                       {"constants_h", r.constants_h},
                       {"D_g", r.constants_g.D(r.s)},
                       {"D_h", r.constants_h.D(r.s)},
                       {"C_g", r.C_g},
                       {"C_h", r.C_h},
                       {"quasi_isometry", r.quasi_isometry},
                       {"delta_nabla_max", r.delta_nabla_max},
                       {"phi_g", phi_json(r.phi_g)},
                       {"phi_h", phi_json(r.phi_h)},
                       {"branch_g", branch_json(r.branch_g)},
                       {"branch_h", branch_json(r.branch_h)},
                       {"refinement_flag", r.refinement_flag},
                       {"nodes", r.nodes.size()},
                       {"verdict", r.verdict}};
}

void write_csv(std::ostream& os, const BoundReport& r)
{
    const int m = r.m;
    std::ostringstream hdr;
    hdr << "level";
    for (int i = 0; i < m; ++i) hdr << ",y" << i;
    hdr << ",weight_g,weight_h,delta,delta_nabla";
    for (const char* nu : {"g", "h"}) {
        hdr << ",Kbar_" << nu << ",Kunder_" << nu;
        for (int k = 0; k <= m; ++k) hdr << ",Kbar_" << nu << "_" << k << ",Kunder_" << nu << "_" << k;
        hdr << ",nablaR_" << nu << ",Psi_" << nu << ",Phi_" << nu << ",Theta_" << nu << ",integrand_" << nu;
    }
    hdr << ",Xi_g";
    os << hdr.str() << '\n';
    std::ostringstream line;
    line.imbue(std::locale::classic());
    line << std::setprecision(17);
    for (const CriterionNode& n : r.nodes) {
        line.str("");
        line << n.level;
        for (int i = 0; i < m; ++i) line << ',' << n.y[i];
        line << ',' << n.weight_g << ',' << n.weight_h << ',' << n.delta << ',' << n.delta_nabla;
        auto block = [&](const LocalCurvature& K, double ps, double ph, double th, double in) {
            line << ',' << K.Kbar << ',' << K.Kunder;
            for (int k = 0; k <= m; ++k) line << ',' << K.Kbar_k[k] << ',' << K.Kunder_k[k];
            line << ',' << K.nabla_R << ',' << ps << ',' << ph << ',' << th << ',' << in;
        };
        block(n.K_g, n.psi_g, n.phi_g, n.theta_g, n.integrand_g);
        block(n.K_h, n.psi_h, n.phi_h, n.theta_h, n.integrand_h);
        line << ',' << n.xi_g << '\n';
        os << line.str();
    }
}

// ------------------------------------------------------------------ L² norms

namespace {

double form_sq(const Model& model, const ModelForm& alpha, const Vec& p)
{
    const FormValue a = frame_components(model, model.frame_point(p), alpha(p));
    return a.coeffs.squaredNorm();
}

double sphere_l2_sq(const Model& model, const ModelForm& alpha, int n)
{
    const int m = model.dim();
    const double R = model.spec().radius;
    std::vector<int> counts(m, n);
    counts[m - 1] = 2 * n;  // azimuth on [0, 2π)
    std::size_t total = 1;
    for (int c : counts) total *= static_cast<std::size_t>(c);
    std::vector<double> vals(total);
    parallel_for(total, 1, [&](std::size_t idx) {
        std::vector<double> ang(m);
        std::size_t r = idx;
        for (int i = 0; i < m; ++i) {
            const int j = static_cast<int>(r % counts[i]);
            r /= counts[i];
            const double span = i == m - 1 ? 2.0 * kPi : kPi;
            ang[i] = (j + 0.5) * span / counts[i];
        }
        Vec p(m + 1);
        double sinprod = 1.0, dens = 1.0;
        for (int i = 0; i < m; ++i) {
            p[i] = sinprod * std::cos(ang[i]);
            if (i < m - 1) dens *= std::pow(std::sin(ang[i]), m - 1 - i);
            sinprod *= std::sin(ang[i]);
        }
        p[m] = sinprod;
        p.normalize();
        double w = dens * std::pow(R, m);
        for (int i = 0; i < m; ++i) w *= (i == m - 1 ? 2.0 * kPi : kPi) / counts[i];
        vals[idx] = form_sq(model, alpha, p) * w;
    });
    double s = 0.0;
    for (double v : vals) s += v;
    return s;
}

}  // namespace

double form_l2_norm(const Model& model, const ModelForm& alpha, const QuadSpec& q)
{
    if (model.kind() == ModelKind::sphere) return std::sqrt(sphere_l2_sq(model, alpha, std::max(16, static_cast<int>(std::ceil(kPi / q.cell)) * 4)));
    const Vec center = q.center.size() == model.dim() ? q.center : default_center(model, model);
    double W = q.half_width;
    for (;;) {
        const Box box = make_box(model, center, W);
        const Cells cells = make_cells(box, q.cell);
        double cv = 1.0;
        for (int i = 0; i < box.m; ++i) cv *= cells.width[i];
        std::vector<double> vals(cells.count()), shell(cells.count(), 0.0);
        parallel_for(cells.count(), q.workers, [&](std::size_t i) {
            std::vector<int> multi(box.m);
            const Vec u = cell_center(box, cells, i, &multi);
            const Vec y = box.point(u);
            const double dens = volume_density(model, y) * box.jacobian(u);
            vals[i] = form_sq(model, alpha, y) * dens * cv;
            if (on_boundary(multi, cells)) shell[i] = vals[i];
        });
        double total = 0.0, edge = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            total += vals[i];
            edge += shell[i];
        }
        if (box.compact || edge <= q.tail_tol * total) return std::sqrt(total);
        if (2.0 * W > q.max_half_width) throw NumericalError("form is not square integrable at resolution");
        W *= 2.0;
    }
}

// ------------------------------------------------------------------ gradient bounds

bool GradientCheck::pass() const
{
    return std::all_of(items.begin(), items.end(), [](const BoundCheckItem& i) { return i.pass; });
}

void to_json(nlohmann::json& j, const GradientCheck& g)
{
    nlohmann::json items = nlohmann::json::array();
    for (const BoundCheckItem& i : g.items)
        items.push_back({{"kind", i.kind}, {"lhs", i.lhs}, {"lhs_se", i.lhs_se}, {"rhs", i.rhs},
                         {"margin", i.margin()}, {"se_multiplier", 3.0}, {"pass", i.pass}});
    j = nlohmann::json{{"s", g.s},     {"alpha_l2", g.alpha_l2}, {"psi", g.psi}, {"xi", g.xi},
                       {"phi", g.phi}, {"items", items},         {"pass", g.pass()}};
}

namespace {

struct SquaredSum {
    double value = 0.0, var = 0.0;
    void add(const EstimatorResult& r)
    {
        const double a = std::abs(r.scalar());
        value += a * a;
        var += 4.0 * a * a * r.scalar_se() * r.scalar_se();
    }
    BoundCheckItem item(const std::string& kind, double rhs) const
    {
        BoundCheckItem it;
        it.kind = kind;
        it.lhs = value;
        it.lhs_se = std::sqrt(var);
        it.rhs = rhs;
        it.pass = it.lhs - 3.0 * it.lhs_se <= rhs;
        return it;
    }
};

}  // namespace

GradientCheck gradient_bound_check(const Model& model, const ModelForm& alpha, int k, const Vec& x, double s,
                                   double alpha_l2, const Constants& c, const EstimatorOptions& opts)
{
    const int m = model.dim();
    if (k < 0 || k > m) throw ValidationError("degree out of range");
    const ExteriorAlgebra& ext = ExteriorAlgebra::of(m);
    GradientCheck out;
    out.s = s;
    out.alpha_l2 = alpha_l2;
    const LocalCurvature lk = local_K(model, x);
    out.psi = psi(lk, s, c);
    out.xi = xi(lk, s, c);
    out.phi = phi(model, x, s).value;
    const double norm2 = alpha_l2 * alpha_l2;

    auto basis = [&](int deg, int i) {
        FormValue v = FormValue::zero(m);
        v.coeffs[ext.degree_offset(deg) + i] = 1.0;
        v.refresh_mask();
        return v;
    };
    SquaredSum d, del, nab;
    if (k + 1 <= m)
        for (int i = 0; i < ext.degree_size(k + 1); ++i) d.add(bismut_d(model, alpha, x, s, basis(k + 1, i), opts));
    if (k >= 1)
        for (int i = 0; i < ext.degree_size(k - 1); ++i)
            del.add(bismut_delta(model, alpha, x, s, basis(k - 1, i), opts));
    for (int a = 0; a < m; ++a)
        for (int i = 0; i < ext.degree_size(k); ++i)
            nab.add(bismut_nabla(model, alpha, x, s, MixedTensor::single(m, a, basis(k, i), k), opts));
    out.items.push_back(d.item("d", out.psi * out.phi * norm2));
    out.items.push_back(del.item("delta", out.psi * out.phi * norm2));
    out.items.push_back(nab.item("nabla", out.xi * out.phi * norm2));
    return out;
}

// ------------------------------------------------------------------ transformed derivatives

TransformedCheck transformed_check(const Model& g, const Model& h, const ModelForm& alpha, int k, const Vec& x,
                                   double s, const std::function<FormValue(const Vec&)>& semigroup_exact,
                                   double alpha_l2, const Constants& c, const EstimatorOptions& opts)
{
    if (!g.flat() || g.kind() == ModelKind::conformal)
        throw ModelError("transformed check assembles frames on a flat reference metric");
    const int m = g.dim();
    if (k < 0 || k > m) throw ValidationError("degree out of range");
    const ExteriorAlgebra& ext = ExteriorAlgebra::of(m);
    const int L = ext.size();
    const MetricPair pair = metric_pair(g, h, x);
    const Eigen::MatrixXd Ah = pair.calA_half, Amh = pair.calA_mhalf;

    // η = P_sα(x) and ∇_{e_i}η restricted to degree k.
    const EstimatorResult sg = semigroup_estimate(g, alpha, x, s, opts);
    Eigen::VectorXcd eta = Eigen::VectorXcd::Zero(L);
    Eigen::VectorXd eta_se = Eigen::VectorXd::Zero(L);
    const int off = ext.degree_offset(k), nk = ext.degree_size(k);
    eta.segment(off, nk) = sg.value.segment(off, nk);
    eta_se.segment(off, nk) = sg.se.segment(off, nk);
    std::vector<Eigen::VectorXcd> grad(m, Eigen::VectorXcd::Zero(L));
    std::vector<Eigen::VectorXd> grad_se(m, Eigen::VectorXd::Zero(L));
    for (int a = 0; a < m; ++a)
        for (int i = 0; i < nk; ++i) {
            FormValue th = FormValue::zero(m);
            th.coeffs[off + i] = 1.0;
            th.refresh_mask();
            const EstimatorResult r = bismut_nabla(g, alpha, x, s, MixedTensor::single(m, a, th, k), opts);
            grad[a][off + i] = r.scalar();
            grad_se[a][off + i] = r.scalar_se();
        }

    Eigen::VectorXcd dsum = Eigen::VectorXcd::Zero(L), delsum = Eigen::VectorXcd::Zero(L);
    Eigen::VectorXd dvar = Eigen::VectorXd::Zero(L), delvar = Eigen::VectorXd::Zero(L);
    for (int a = 0; a < m; ++a) {
        Vec e = Vec::Zero(m);
        e[a] = 1.0;
        const Eigen::MatrixXd dA = covariant_derivative_calA(g, h, x, e, 0.5);
        const Eigen::MatrixXd Wd = ext.wedge_matrix(a), Wi = ext.interior_matrix(a);
        const Eigen::MatrixXd Md = Wd * Ah, Nd = Wd * dA, Mi = -Wi * Ah, Ni = -Wi * dA;
        dsum += Md.cast<cplx>() * grad[a] + Nd.cast<cplx>() * eta;
        delsum += Mi.cast<cplx>() * grad[a] + Ni.cast<cplx>() * eta;
        dvar += Md.array().square().matrix() * grad_se[a].array().square().matrix() +
                Nd.array().square().matrix() * eta_se.array().square().matrix();
        delvar += Mi.array().square().matrix() * grad_se[a].array().square().matrix() +
                  Ni.array().square().matrix() * eta_se.array().square().matrix();
    }

    const FormField field = [&](const Vec& y) {
        const MetricPair py = metric_pair(g, h, y);
        FormValue v = semigroup_exact(y);
        v.coeffs = py.calA_half.cast<cplx>() * v.coeffs;
        v.frame = FrameTag::coordinate;
        v.refresh_mask();
        return v;
    };
    TransformedCheck out;
    out.d_assembled = FormValue::from_coeffs(m, dsum);
    out.delta_assembled = FormValue::from_coeffs(m, delsum);
    out.d_direct = numeric_d(g, field, x);
    out.delta_direct = numeric_delta(g, field, x);
    out.d_se = std::sqrt(dvar.maxCoeff());
    out.delta_se = std::sqrt(delvar.maxCoeff());
    const Eigen::VectorXcd td = Amh.cast<cplx>() * dsum, tdel = Amh.cast<cplx>() * delsum;
    out.d_lhs = td.squaredNorm();
    out.delta_lhs = tdel.squaredNorm();

    const LocalCurvature lk = local_K(g, x);
    auto opnorm = [](const Eigen::MatrixXd& M) { return Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()[0]; };
    const double nA = opnorm(Ah), nAm = opnorm(Amh);
    out.ledger_constant = 2.0 * m * m * m * nA * nA * nAm * nAm * c.gamma * std::exp(s * c.c_gamma);
    out.rhs = out.ledger_constant * (pair.delta_nabla + xi(lk, s, c)) * phi(g, x, s).value * alpha_l2 * alpha_l2;
    const double sd = 2.0 * std::sqrt(out.d_lhs) * nAm * out.d_se * std::sqrt(double(L));
    const double sdel = 2.0 * std::sqrt(out.delta_lhs) * nAm * out.delta_se * std::sqrt(double(L));
    out.pass = out.d_lhs - 3.0 * sd <= out.rhs && out.delta_lhs - 3.0 * sdel <= out.rhs;
    return out;
}

}  // namespace hodgemc
