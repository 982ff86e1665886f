// Acceptance run: one PASS/FAIL line per criterion.

#include "scenario.hpp"

#include "hodgemc/bismut.hpp"
#include "hodgemc/bounds.hpp"
#include "hodgemc/differential.hpp"
#include "hodgemc/pair.hpp"
#include "hodgemc/paths.hpp"

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace hodgemc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ModelPtr model_of(ModelKind kind, int m)
{
    ModelSpec s;
    s.kind = kind;
    s.m = m;
    if (kind == ModelKind::flat_torus) s.periods.assign(m, 1.0);
    return make_model(s);
}

ConformalFactor gaussian_factor(double a, double w, const Eigen::VectorXd& c)
{
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::gaussian;
    psi.amplitude = a;
    psi.width = w;
    psi.center = c;
    return psi;
}

ConformalFactor constant_factor(double c)
{
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::constant;
    psi.amplitude = c;
    return psi;
}

Vec point(std::initializer_list<double> v)
{
    Vec x(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double a : v) x[i++] = a;
    return x;
}

EstimatorOptions est(std::size_t n, double dt, std::uint64_t seed)
{
    EstimatorOptions o;
    o.n_paths = n;
    o.dt = dt;
    o.seed = seed;
    o.workers = 1;
    return o;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ------------------------------------------------------------------ 1

Outcome gradient_oracle()
{
    const auto t0 = Clock::now();
    const auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    const double s = 0.5;
    const ModelForm f = [](const Vec& p) { return FormValue::scalar(2, std::exp(-p.squaredNorm() / 2), FrameTag::coordinate); };
    const EstimatorResult r = bismut_d(*e, f, x, s, FormValue::covector(2, 0), est(200000, 1e-3, 101));
    // ∂₁ of (1+s)^{-1} exp(−|x|²/(2(1+s))).
    const double oracle = -x[0] / (1 + s) * std::exp(-x.squaredNorm() / (2 * (1 + s))) / (1 + s);
    const double t = seconds_since(t0);
    const double dev = std::abs(r.scalar().real() - oracle);
    return {dev <= 3 * r.scalar_se() && t <= 300.0,
            fmt("estimate %.6f oracle %.6f |dev| %.2e <= 3SE %.2e, %.0f s", r.scalar().real(), oracle, dev,
                3 * r.scalar_se(), t)};
}

// ------------------------------------------------------------------ 2

Outcome transport()
{
    const double s = 1.0;
    double worst = 0.0;
    for (auto kind : {ModelKind::sphere, ModelKind::hyperbolic}) {
        const auto model = model_of(kind, 2);
        const Vec x0 = kind == ModelKind::sphere ? point({0, 0, 1}) : point({0, 1});
        const double expected = std::exp(kind == ModelKind::sphere ? -s / 2 : s / 2);
        const int off = ExteriorAlgebra::of(2).degree_offset(1);
        for (int i = 0; i < 1000; ++i) {
            const PathSample p = sample_path(*model, x0, s, 1e-3, 202, static_cast<std::uint64_t>(i));
            const Eigen::MatrixXd Q1 = p.Q.back().block(off, off, 2, 2);
            worst = std::max(worst, (Q1 - expected * Eigen::MatrixXd::Identity(2, 2)).norm() / expected);
        }
    }
    return {worst <= 1e-6, fmt("max relative deviation %.2e over 2x1000 paths (tol 1e-6)", worst)};
}

// ------------------------------------------------------------------ 3

Outcome weitzenbock_sanity()
{
    std::vector<std::pair<ModelPtr, std::function<Vec(std::mt19937_64&)>>> models;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int m = 2; m <= 4; ++m) {
        models.push_back({model_of(ModelKind::euclidean, m), [m, u](std::mt19937_64& r) mutable {
                              Vec x(m);
                              for (int i = 0; i < m; ++i) x[i] = u(r);
                              return x;
                          }});
        models.push_back({model_of(ModelKind::flat_torus, m), [m, u](std::mt19937_64& r) mutable {
                              Vec x(m);
                              for (int i = 0; i < m; ++i) x[i] = 0.5 + 0.5 * u(r);
                              return x;
                          }});
        models.push_back({model_of(ModelKind::sphere, m), [m, u](std::mt19937_64& r) mutable {
                              Vec x(m + 1);
                              for (int i = 0; i <= m; ++i) x[i] = u(r);
                              return Vec(x / x.norm());
                          }});
        models.push_back({model_of(ModelKind::hyperbolic, m), [m, u](std::mt19937_64& r) mutable {
                              Vec x(m);
                              for (int i = 0; i < m; ++i) x[i] = u(r);
                              x[m - 1] = 1.0 + 0.5 * u(r);
                              return x;
                          }});
        models.push_back({make_conformal(model_of(ModelKind::euclidean, m),
                                         gaussian_factor(0.6, 0.8, Eigen::VectorXd::Zero(m))),
                          [m, u](std::mt19937_64& r) mutable {
                              Vec x(m);
                              for (int i = 0; i < m; ++i) x[i] = u(r);
                              return x;
                          }});
    }
    std::mt19937_64 rng(303);
    double r0 = 0.0, r1 = 0.0;
    int count = 0;
    for (auto& [model, draw] : models) {
        const int m = model->dim();
        for (int t = 0; t < 10; ++t) {
            const FramePoint fp = model->frame_point(draw(rng));
            const LMat W = model->weitzenbock_at(fp);
            const Eigen::MatrixXd ric = ricci_in_frame(model->riemann_in_frame(fp));
            const int off = ExteriorAlgebra::of(m).degree_offset(1);
            r0 = std::max(r0, std::abs(W(0, 0)));
            r1 = std::max(r1, (Eigen::MatrixXd(W.block(off, off, m, m)) - ric.transpose()).cwiseAbs().maxCoeff());
            ++count;
        }
    }
    return {r0 == 0.0 && r1 <= 1e-8,
            fmt("max |R^(0)| = %.1e (exact 0), max |R^(1) - Ric^tr| = %.2e (tol 1e-8), %d model points", r0, r1, count)};
}

// ------------------------------------------------------------------ 4

Outcome gradient_bounds()
{
    struct Cell {
        std::string name;
        ModelPtr model;
        ModelForm alpha;
        Vec x;
    };
    std::vector<Cell> cells;
    cells.push_back({"flat_torus", model_of(ModelKind::flat_torus, 2),
                     [](const Vec& p) {
                         return cplx(std::cos(2 * M_PI * p[0]) + 0.5 * std::sin(2 * M_PI * p[1])) *
                                FormValue::covector(2, 0, FrameTag::coordinate);
                     },
                     point({0.2, 0.1})});
    cells.push_back({"sphere", model_of(ModelKind::sphere, 2),
                     [](const Vec&) { return FormValue::covector(3, 0, FrameTag::coordinate); }, point({0.6, 0.0, 0.8})});
    const auto hyp = model_of(ModelKind::hyperbolic, 2);
    // Gaussian in (x, log y): square integrable at both ends of the half-plane.
    cells.push_back({"hyperbolic", hyp,
                     [](const Vec& p) {
                         const double r2 = p[0] * p[0] + std::pow(std::log(p[1]), 2);
                         return cplx(std::exp(-r2 / 0.5)) * FormValue::covector(2, 0, FrameTag::coordinate);
                     },
                     point({0.2, 1.1})});
    int failures = 0, cells_run = 0;
    std::ostringstream detail;
    for (const auto& c : cells) {
        QuadSpec q;
        q.cell = 0.05;
        const double l2 = form_l2_norm(*c.model, c.alpha, q);
        const Constants k = resolve_constants(*c.model, KatoOptions{});
        for (double s : {0.25, 0.5, 1.0}) {
            const GradientCheck g = gradient_bound_check(*c.model, c.alpha, 1, c.x, s, l2, k,
                                                         est(20000, 1e-3, 404 + cells_run));
            ++cells_run;
            double worst = -1e300;
            for (const auto& it : g.items) worst = std::max(worst, (it.lhs - 3 * it.lhs_se) / it.rhs);
            if (!g.pass()) ++failures;
            detail << c.name << "@" << s << (g.pass() ? " ok" : " FAIL") << " (max (lhs-3SE)/rhs " << worst << "); ";
        }
    }
    return {failures == 0, fmt("%d/%d cells fail; ", failures, cells_run) + detail.str()};
}

// ------------------------------------------------------------------ 5

FormField trig_field(int m, int k, std::mt19937_64& rng)
{
    std::normal_distribution<double> n;
    std::uniform_int_distribution<int> freq(-1, 1);
    const auto& ex = ExteriorAlgebra::of(m);
    struct Term {
        int idx;
        Eigen::VectorXd kvec;
        cplx a, b;
    };
    std::vector<Term> terms;
    for (int i = 0; i < ex.degree_size(k); ++i) {
        Eigen::VectorXd kv(m);
        for (int j = 0; j < m; ++j) kv[j] = freq(rng);
        terms.push_back({ex.degree_offset(k) + i, kv, cplx(n(rng), n(rng)), cplx(n(rng), n(rng))});
    }
    return [m, terms](const Vec& y) {
        FormValue f = FormValue::zero(m, FrameTag::coordinate);
        for (const auto& t : terms) {
            const double ph = 2.0 * M_PI * t.kvec.dot(Eigen::VectorXd(y));
            f.coeffs[t.idx] += t.a * std::cos(ph) + t.b * std::sin(ph);
        }
        f.refresh_mask();
        return f;
    };
}

Mat random_spd(int m, std::mt19937_64& rng, double spread)
{
    std::normal_distribution<double> n;
    Mat B(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) B(i, j) = n(rng);
    Eigen::HouseholderQR<Mat> qr(B);
    const Mat Q = qr.householderQ();
    Vec d(m);
    for (int i = 0; i < m; ++i) d[i] = std::exp(spread * n(rng));
    return Q * d.asDiagonal() * Q.transpose();
}

cplx form_inner(const Eigen::MatrixXd& gram, const FormValue& a, const FormValue& b)
{
    return a.coeffs.dot(gram.cast<cplx>() * b.coeffs);
}

Outcome lemma_identities()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n;
    const int trials = 1000;
    std::ostringstream detail;
    bool ok = true;

    // codifferential transform under h = e^{2ψ}g on the torus
    double codiff = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int m = 2 + t % 2, k = 1 + t % m;
        const auto g = model_of(ModelKind::flat_torus, m);
        const auto h = make_conformal(g, gaussian_factor(0.3 + 0.5 * u(rng), 0.2 + 0.2 * u(rng),
                                                          Eigen::VectorXd::Constant(m, 0.5)));
        const FormField eta = trig_field(m, k, rng);
        const FormField Aeta = [&](const Vec& y) {
            FormValue f = eta(y);
            f.coeffs = metric_pair_at(g->chart().metric(y), h->chart().metric(y)).calA.cast<cplx>() * f.coeffs;
            return f;
        };
        Vec x(m);
        for (int i = 0; i < m; ++i) x[i] = u(rng);
        const FormValue direct = numeric_delta(*h, eta, x);
        const MetricPair p = metric_pair(*g, *h, x);
        Vec dlr(m);
        for (int i = 0; i < m; ++i) dlr[i] = jacobi_dlogrho(*g, *h, x, Vec::Unit(m, i)).dlog_rho;
        const Eigen::VectorXd sharp = p.G.ldlt().solve(dlr);
        FormValue rhs = numeric_delta(*g, Aeta, x) - interior(sharp, Aeta(x));
        rhs.coeffs = p.calA_power(-1.0).cast<cplx>() * rhs.coeffs;
        codiff = std::max(codiff, (direct.coeffs - rhs.coeffs).norm() / (1.0 + direct.coeffs.norm()));
    }
    ok &= codiff <= 1e-6;
    detail << "codifferential transform " << codiff << " (1e-6); ";

    // conformal transformation rules
    double rules = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int m = 2 + t % 2, k = t % (m + 1);
        const auto g = model_of(ModelKind::flat_torus, m);
        const auto h = make_conformal(g, gaussian_factor(-0.6 + 1.2 * u(rng), 0.2 + 0.2 * u(rng),
                                                          Eigen::VectorXd::Constant(m, 0.5)));
        const FormField a = trig_field(m, k, rng);
        Vec x(m);
        for (int i = 0; i < m; ++i) x[i] = u(rng);
        const ConformalRules r = conformal_rules(*h, x, a, k);
        const double psi = h->conformal_psi(x);
        const MetricPair p = metric_pair(*g, *h, x);
        double e = std::abs(r.inner_scale - std::exp(-2.0 * k * psi)) + std::abs(r.vol_factor - std::exp(m * psi)) +
                   std::abs(r.vol_factor - p.rho);
        const int o = ExteriorAlgebra::of(m).degree_offset(k);
        FormValue b = FormValue::zero(m, FrameTag::coordinate);
        b.coeffs[o] = 1.0;
        e += std::abs(identification_apply(p, b, Identification::I_star).coeffs[o].real() - r.istar_factor);
        const FormValue direct = k == 0 ? FormValue::zero(m, FrameTag::coordinate) : numeric_delta(*h, a, x);
        e += (r.delta_psi.coeffs - direct.coeffs).norm() / (1.0 + direct.coeffs.norm());
        rules = std::max(rules, e);
    }
    ok &= rules <= 1e-6;
    detail << "conformal rules " << rules << " (1e-6); ";

    // Jacobi formula against a centered finite difference of det A
    double jac = 0.0;
    bool jac_bound = true;
    const auto ge = model_of(ModelKind::euclidean, 2);
    for (int t = 0; t < trials; ++t) {
        const auto he = make_conformal(ge, gaussian_factor(0.3 + 0.6 * u(rng), 0.5 + 0.5 * u(rng), Eigen::VectorXd::Zero(2)));
        Vec x(2), X(2);
        for (int i = 0; i < 2; ++i) {
            x[i] = -1.0 + 2.0 * u(rng);
            X[i] = -1.0 + 2.0 * u(rng);
        }
        const JacobiResult r = jacobi_dlogrho(*ge, *he, x, X);
        const double e = 1e-5;
        const double fd = (metric_pair(*ge, *he, x + e * X).A.determinant() - metric_pair(*ge, *he, x - e * X).A.determinant()) /
                          (2 * e);
        jac = std::max(jac, std::abs(r.d_detA - fd) / std::max(std::abs(fd), 1e-3));
        jac_bound &= r.holds;
    }
    ok &= jac <= 1e-6 && jac_bound;
    detail << "Jacobi " << jac << " (1e-6)" << (jac_bound ? "" : " bound violated") << "; ";

    // sinh bound on random SPD pairs
    int sinh_fail = 0;
    for (int t = 0; t < 10 * trials; ++t) {
        const int m = 2 + t % 3;
        if (!sinh_bound_check(metric_pair_at(random_spd(m, rng, 0.7), random_spd(m, rng, 0.7))).holds) ++sinh_fail;
    }
    ok &= sinh_fail == 0;
    detail << "sinh bound failures " << sinh_fail << "/" << 10 * trials << "; ";

    // trace inequality
    double trace = 0.0;
    for (int t = 0; t < 10 * trials; ++t) {
        const int m = 1 + t % 4;
        Eigen::MatrixXcd A(m, m), B(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                A(i, j) = cplx(n(rng), n(rng));
                B(i, j) = cplx(n(rng), n(rng));
            }
        trace = std::max(trace, std::abs((A * B).trace()) / (A.norm() * B.norm()));
    }
    ok &= trace <= 1.0 + 1e-12;
    detail << "max |tr AB|/(|A||B|) " << trace << " (<= 1); ";

    // adjointness of I and I* with the volume densities
    double adj = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int m = 2 + t % 3;
        const MetricPair p = metric_pair_at(random_spd(m, rng, 0.6), random_spd(m, rng, 0.6));
        Eigen::VectorXcd ca(1 << m), cb(1 << m);
        for (int i = 0; i < (1 << m); ++i) {
            ca[i] = cplx(n(rng), n(rng));
            cb[i] = cplx(n(rng), n(rng));
        }
        const FormValue a = FormValue::from_coeffs(m, ca, FrameTag::coordinate);
        const FormValue b = FormValue::from_coeffs(m, cb, FrameTag::coordinate);
        const cplx lhs = form_inner(p.gram_h, identification_apply(p, a, Identification::I), b) * std::sqrt(p.H.determinant());
        const cplx rhs = form_inner(p.gram_g, a, identification_apply(p, b, Identification::I_star)) * std::sqrt(p.G.determinant());
        adj = std::max(adj, std::abs(lhs - rhs) / (1.0 + std::abs(lhs)));
    }
    ok &= adj <= 1e-10;
    detail << "I/I* adjointness " << adj << " (1e-10); ";

    const double t = seconds_since(t0);
    ok &= t <= 120.0;
    detail << fmt("%.1f s (<= 120)", t);
    return {ok, detail.str()};
}

// ------------------------------------------------------------------ 6

Outcome kato_coulomb()
{
    const auto t0 = Clock::now();
    const auto e = model_of(ModelKind::euclidean, 3);
    KatoOptions k;
    k.t_grid = {0.025, 0.05, 0.1};
    k.x_samples = {point({0, 0, 0}), point({0.3, 0, 0})};
    k.n_paths = 100000;
    k.dt = 1e-3;
    k.seed = 606;
    const KatoReport r = kato_test(*e, [](const Vec& x) { return 1.0 / x.norm(); }, k);
    const double r1 = r.estimate[1] / r.estimate[0], r2 = r.estimate[2] / r.estimate[1];
    const double t = seconds_since(t0);
    const bool ok = std::abs(r1 / std::sqrt(2.0) - 1) <= 0.15 && std::abs(r2 / std::sqrt(2.0) - 1) <= 0.15 &&
                    r.verdict == KatoVerdict::kato && t <= 600.0;
    return {ok, fmt("ratios %.4f %.4f (sqrt2 +-15%%), verdict %s, %.0f s", r1, r2, to_string(r.verdict), t)};
}

// ------------------------------------------------------------------ 7

Outcome criterion()
{
    const auto t0 = Clock::now();
    const auto g = model_of(ModelKind::euclidean, 2);
    QuadSpec q;
    const Constants c = resolve_constants(*g, KatoOptions{});

    const auto bump = make_conformal(g, gaussian_factor(0.5, 1.0, Eigen::VectorXd::Zero(2)));
    QuadSpec qb = q;
    qb.quasi_isometry = std::exp(2 * 0.5);
    const BoundReport rb = criterion_integral(*g, *bump, 0.5, qb, c, resolve_constants(*bump, [] {
        KatoOptions k;
        k.t_grid = {0.025, 0.05, 0.1};
        k.n_paths = 2000;
        k.dt = 0.0125;
        k.seed = 707;
        k.x_samples = {point({0, 0}), point({0.5, 0})};
        return k;
    }()));
    const bool bump_ok = rb.verdict == "finite" && (rb.branch_g.stable || rb.branch_h.stable);

    const auto flat = make_conformal(g, constant_factor(0.3));
    QuadSpec qc = q;
    qc.cell = 0.5;
    qc.half_width = 2.0;
    qc.max_half_width = 8.0;
    qc.quasi_isometry = std::exp(2 * 0.3);
    const BoundReport rc = criterion_integral(*g, *flat, 0.5, qc, c, resolve_constants(*flat, KatoOptions{}));
    const bool const_ok = rc.verdict == "divergent-at-resolution";
    const double t = seconds_since(t0);
    return {bump_ok && const_ok && t <= 600.0,
            fmt("bump: verdict %s, refinement change g %.2e h %.2e; constant: verdict %s; %.0f s", rb.verdict.c_str(),
                rb.branch_g.relative_change, rb.branch_h.relative_change, rc.verdict.c_str(), t)};
}

// ------------------------------------------------------------------ 8

Outcome determinism()
{
    const std::string mixed =
        "id: determinism\n"
        "seed: 808\n"
        "s: [0.25, 0.5]\n"
        "g_model: {kind: sphere, m: 2}\n"
        "estimator: {n_paths: 3000, dt: 0.005}\n"
        "kato: {n_paths: 600, x_samples: [[0, 0, 1]]}\n"
        "pipelines:\n"
        "  - {kind: kato}\n"
        "  - {kind: semigroup, x: [0.6, 0, 0.8], alpha: {profile: constant, indices: [0]}}\n"
        "  - {kind: bismut, op: d, x: [0.6, 0, 0.8], alpha: {profile: gaussian, center: [0, 0, 1]}, v: [0]}\n"
        "  - {kind: bismut, op: nabla, x: [0.6, 0, 0.8], alpha: {profile: constant, indices: [2]}, v: [0], direction: 1}\n"
        "  - {kind: paths, x: [0, 0, 1], count: 3}\n";
    std::vector<cli::Scenario> scenarios{cli::parse_scenario(mixed),
                                         cli::load_scenario(HODGEMC_SOURCE_DIR "/configs/torus_semigroup.yaml")};
    bool ok = true;
    std::size_t bytes = 0;
    for (const auto& sc : scenarios) {
        std::string ref;
        std::vector<cli::Table> ref_tables;
        for (int w : {1, 8}) {
            cli::RunOptions ro;
            ro.workers = w;
            const cli::RunResult r = cli::run_scenario(sc, ro);
            const std::string text = cli::dump_report(r.report);
            if (w == 1) {
                ref = text;
                ref_tables = r.tables;
                bytes += text.size();
            } else {
                ok &= text == ref && r.tables.size() == ref_tables.size();
                for (std::size_t i = 0; ok && i < r.tables.size(); ++i) ok &= r.tables[i].content == ref_tables[i].content;
            }
        }
    }
    return {ok, fmt("%zu scenarios, %zu report bytes, workers {1, 8} %s", scenarios.size(), bytes,
                    ok ? "byte-identical" : "DIFFER")};
}

// ------------------------------------------------------------------ 9

Outcome dt_halving()
{
    const auto t = model_of(ModelKind::flat_torus, 2);
    const ModelForm f = [](const Vec& p) {
        return FormValue::scalar(2, std::cos(2 * M_PI * p[0]) + 0.5 * std::sin(2 * M_PI * p[1]), FrameTag::coordinate);
    };
    const Vec x = point({0.2, 0.1});
    const double s = 0.5;
    // Coupled refinement: the coarse run sums the fine run's Brownian increments pairwise.
    EstimatorOptions coarse = est(100000, 1e-2, 909);
    coarse.substeps = 2;
    const EstimatorResult a = semigroup_estimate(*t, f, x, s, coarse);
    const EstimatorResult b = semigroup_estimate(*t, f, x, s, est(100000, 5e-3, 909));
    const double diff = std::abs(a.scalar().real() - b.scalar().real());
    const double se = std::hypot(a.scalar_se(), b.scalar_se());
    const double oracle = std::exp(-2 * M_PI * M_PI * s) * (std::cos(2 * M_PI * x[0]) + 0.5 * std::sin(2 * M_PI * x[1]));
    return {diff <= se, fmt("|P(dt) - P(dt/2)| = %.2e <= combined SE %.2e (estimates %.5f %.5f, exact %.5f)", diff, se,
                            a.scalar().real(), b.scalar().real(), oracle)};
}

}  // namespace

int main(int argc, char** argv)
{
    // Optional arguments select criteria by number; default is all of them.
    std::vector<bool> selected(10, argc == 1);
    for (int i = 1; i < argc; ++i) {
        const int c = std::atoi(argv[i]);
        if (c >= 1 && c <= 9) selected[c] = true;
    }
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"Euclidean Bismut-gradient oracle", gradient_oracle},
        {"constant-curvature damped transport", transport},
        {"Weitzenbock sanity", weitzenbock_sanity},
        {"one-sided gradient estimates", gradient_bounds},
        {"pointwise identities", lemma_identities},
        {"Kato Coulomb scaling", kato_coulomb},
        {"criterion evaluation", criterion},
        {"determinism", determinism},
        {"discretization convergence", dt_halving},
    };
    int failed = 0;
    int ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i + 1]) continue;
        ++ran;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " | " << o.detail
                  << std::endl;
    }
    std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
