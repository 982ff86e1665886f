#include "doctest.h"
#include "hodgemc/manifold.hpp"

#include <random>

using namespace hodgemc;

namespace {

ModelSpec spec_of(ModelKind kind, int m)
{
    ModelSpec s;
    s.kind = kind;
    s.m = m;
    if (kind == ModelKind::flat_torus) s.periods.assign(m, 1.0);
    return s;
}

Vec point(std::initializer_list<double> v)
{
    Vec x(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double a : v) x[i++] = a;
    return x;
}

Vec sphere_point(int m, std::mt19937_64& rng)
{
    std::normal_distribution<double> n;
    Vec p(m + 1);
    for (int i = 0; i <= m; ++i) p[i] = n(rng);
    return p / p.norm();
}

double block_offdiag(const LMat& W, int m)
{
    const auto& ex = ExteriorAlgebra::of(m);
    double worst = 0.0;
    for (int i = 0; i < ex.size(); ++i)
        for (int j = 0; j < ex.size(); ++j)
            if (ex.degree(i) != ex.degree(j)) worst = std::max(worst, std::abs(W(i, j)));
    return worst;
}

Eigen::MatrixXd block_of(const LMat& W, int m, int k)
{
    const auto& ex = ExteriorAlgebra::of(m);
    return W.block(ex.degree_offset(k), ex.degree_offset(k), ex.degree_size(k), ex.degree_size(k));
}

std::vector<std::pair<ModelPtr, Vec>> sample_models()
{
    std::vector<std::pair<ModelPtr, Vec>> out;
    for (int m = 2; m <= 4; ++m) {
        out.push_back({make_model(spec_of(ModelKind::euclidean, m)), Vec::Constant(m, 0.2)});
        out.push_back({make_model(spec_of(ModelKind::flat_torus, m)), Vec::Constant(m, 0.3)});
        Vec h = Vec::Constant(m, 0.1);
        h[m - 1] = 1.3;
        out.push_back({make_model(spec_of(ModelKind::hyperbolic, m)), h});
        Vec p = Vec::Zero(m + 1);
        p[0] = 0.6;
        p[m] = 0.8;
        out.push_back({make_model(spec_of(ModelKind::sphere, m)), p});
        ConformalFactor psi;
        psi.family = ConformalFactor::Family::gaussian;
        psi.amplitude = 0.4;
        psi.width = 0.8;
        out.push_back({make_conformal(make_model(spec_of(ModelKind::euclidean, m)), psi), Vec::Constant(m, 0.25)});
    }
    return out;
}

}  // namespace

TEST_CASE("euclidean curvature package vanishes")
{
    const auto model = make_model(spec_of(ModelKind::euclidean, 2));
    const auto pkg = curvature_package(*model, point({0.7, -1.2}));
    CHECK(pkg.gamma.g == Christoffel{}.g);
    CHECK(pkg.riemann.frobenius() == 0.0);
    CHECK(pkg.ricci.norm() == 0.0);
    CHECK(pkg.weitzenbock.norm() == 0.0);
    CHECK(pkg.nabla_R == 0.0);
}

TEST_CASE("flat models have identically zero Christoffels")
{
    for (auto kind : {ModelKind::euclidean, ModelKind::flat_torus}) {
        auto s = spec_of(kind, 3);
        s.mode = DerivMode::finite_difference;
        const auto model = make_model(s);
        const auto g = model->chart().christoffel(point({0.1, 0.2, 0.3}));
        for (double v : g.g) CHECK(v == 0.0);
    }
}

TEST_CASE("unit sphere: Ric equals the metric and the degree one block is the identity")
{
    const auto model = make_model(spec_of(ModelKind::sphere, 2));
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        const Vec x = sphere_point(2, rng);
        const auto pkg = curvature_package(*model, x);
        CHECK((pkg.ricci - pkg.G).norm() < 1e-6 * pkg.G.norm());
        CHECK((block_of(pkg.weitzenbock, 2, 1) - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-6);
    }
}

TEST_CASE("stereographic Christoffels match the symbolic round-metric expression")
{
    // g = e^{2φ}δ with φ = log(2/(1+|y|²)): Γ^k_ij = δ_ik φ_j + δ_jk φ_i − δ_ij φ_k
    for (int m = 2; m <= 4; ++m) {
        const auto model = make_model(spec_of(ModelKind::sphere, m));
        Vec p = Vec::Zero(m + 1);
        p[0] = 0.3;
        p[1] = -0.4;
        p[m] = std::sqrt(1.0 - 0.25);
        Vec y;
        const Chart& c = model->chart_at(p, y);
        const auto g = c.christoffel(y);
        const Vec dphi = -2.0 * y / (1.0 + y.squaredNorm());
        for (int k = 0; k < m; ++k)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    const double ref = (i == k) * dphi[j] + (j == k) * dphi[i] - (i == j) * dphi[k];
                    CHECK(g(k, i, j) == doctest::Approx(ref).epsilon(1e-12));
                }
    }
}

TEST_CASE("hyperbolic plane: Ric = -g, degree one block = -I, Gallot-Meyer floor attained")
{
    const auto model = make_model(spec_of(ModelKind::hyperbolic, 2));
    const auto pkg = curvature_package(*model, point({0.3, 0.7}));
    CHECK((pkg.ricci + pkg.G).norm() < 1e-6 * pkg.G.norm());
    const Eigen::MatrixXd W1 = block_of(pkg.weitzenbock, 2, 1);
    CHECK((W1 + Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-6);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W1);
    const double floor = -1.0 * 1 * (2 - 1);
    CHECK(es.eigenvalues().minCoeff() == doctest::Approx(floor).epsilon(1e-6));
}

TEST_CASE("constant curvature blocks are K k (m - k)")
{
    for (int m = 2; m <= 4; ++m) {
        for (auto kind : {ModelKind::sphere, ModelKind::hyperbolic}) {
            const auto model = make_model(spec_of(kind, m));
            const double K = *model->constant_curvature();
            Vec x = kind == ModelKind::sphere ? Vec(Vec::Unit(m + 1, m)) : Vec(Vec::Unit(m, m - 1));
            const LMat W = model->weitzenbock_at(model->frame_point(x));
            for (int k = 0; k <= m; ++k) {
                const auto B = block_of(W, m, k);
                CHECK((B - K * k * (m - k) * Eigen::MatrixXd::Identity(B.rows(), B.cols())).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("Weitzenbock structure on all models")
{
    for (const auto& [model, x] : sample_models()) {
        const int m = model->dim();
        const auto pkg = curvature_package(*model, x);
        const LMat& W = pkg.weitzenbock;
        CHECK(block_of(W, m, 0)(0, 0) == 0.0);
        CHECK(block_of(W, m, m)(0, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-8));
        CHECK(block_offdiag(W, m) == 0.0);
        CHECK((W - W.transpose()).norm() < 1e-8 * (1.0 + W.norm()));
        // Ric^tr in the orthonormal frame
        const Eigen::MatrixXd ric_frame = pkg.E.transpose() * pkg.ricci * pkg.E;
        CHECK((block_of(W, m, 1) - ric_frame).norm() < 1e-8 * (1.0 + ric_frame.norm()));
        CHECK(riemann_symmetries(pkg.riemann).max() < 1e-6);
        CHECK((pkg.E.transpose() * pkg.G * pkg.E - Mat::Identity(m, m)).norm() < 1e-10);
    }
}

TEST_CASE("finite-difference Christoffels agree with analytic ones")
{
    for (const auto& [model, x] : sample_models()) {
        ModelSpec fd = model->spec();
        fd.mode = DerivMode::finite_difference;
        fd.h_fd = 1e-4;
        ModelPtr other;
        if (fd.kind == ModelKind::conformal) {
            ModelSpec b = *fd.base;
            b.mode = DerivMode::finite_difference;
            auto base = make_model(b);
            other = make_conformal(base, fd.psi);
        } else {
            other = make_model(fd);
        }
        Vec y1, y2;
        const Chart& c1 = model->chart_at(x, y1);
        const Chart& c2 = other->chart_at(x, y2);
        const auto g1 = c1.christoffel(y1), g2 = c2.christoffel(y2);
        double scale = 0.0, diff = 0.0;
        for (std::size_t i = 0; i < g1.g.size(); ++i) {
            scale = std::max(scale, std::abs(g1.g[i]));
            diff = std::max(diff, std::abs(g1.g[i] - g2.g[i]));
        }
        CHECK(diff <= 1e-6 * std::max(scale, 1.0));
    }
}

TEST_CASE("geodesic_step examples")
{
    const auto e = make_model(spec_of(ModelKind::euclidean, 2));
    const auto fp = e->frame_point(point({0.0, 0.0}));
    const auto r = geodesic_step(*e, fp, point({1.0, 0.0}), 0.1);
    CHECK(r.x[0] == doctest::Approx(0.1));
    CHECK(r.x[1] == 0.0);
    CHECK(r.E == fp.E);

    const auto t = make_model(spec_of(ModelKind::flat_torus, 2));
    const auto tr = geodesic_step(*t, t->frame_point(point({0.95, 0.0})), point({1.0, 0.0}), 0.1);
    CHECK(tr.x[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(tr.x[1] == 0.0);

    CHECK_THROWS_AS(geodesic_step(*e, fp, point({1.0, 0.0}), 0.0), std::invalid_argument);
}

TEST_CASE("sphere step has geodesic length h up to O(h^3)")
{
    const auto model = make_model(spec_of(ModelKind::sphere, 2));
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    for (double h : {0.1, 0.05, 0.025}) {
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const auto fp = model->frame_point(sphere_point(2, rng));
            Vec v = point({n(rng), n(rng)});
            v.normalize();
            const auto out = geodesic_step(*model, fp, v, h);
            worst = std::max(worst, std::abs(model->distance(fp.x, out.x) - h));
            CHECK(std::abs(out.x.norm() - 1.0) < 1e-14);
            CHECK((out.E.transpose() * out.E - Mat::Identity(2, 2)).norm() < 1e-12);
            CHECK((out.E.transpose() * out.x).norm() < 1e-12);
        }
        CHECK(worst < h * h * h);
    }
}

TEST_CASE("chart steps keep the frame orthonormal")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (const auto& [model, x] : sample_models()) {
        if (model->kind() == ModelKind::sphere) continue;
        const int m = model->dim();
        auto fp = model->frame_point(x);
        for (int i = 0; i < 200; ++i) {
            Vec v(m);
            for (int j = 0; j < m; ++j) v[j] = n(rng);
            fp = geodesic_step(*model, fp, v, 0.01);
        }
        const Mat G = model->chart().metric(fp.x);
        CHECK((fp.E.transpose() * G * fp.E - Mat::Identity(m, m)).norm() < 1e-10);
    }
}

TEST_CASE("hyperbolic exp map agrees with the closed-form distance")
{
    const auto model = make_model(spec_of(ModelKind::hyperbolic, 2));
    const auto fp = model->frame_point(point({0.2, 0.9}));
    const Vec v = point({0.6, -0.5});
    const Vec q = model->exp_map(fp, v);
    CHECK(model->distance(fp.x, q) == doctest::Approx(v.norm()).epsilon(1e-6));
}

TEST_CASE("tampered Christoffels break the curvature symmetries")
{
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::gaussian;
    psi.amplitude = 0.5;
    psi.width = 1.0;
    const auto clean = make_conformal(make_model(spec_of(ModelKind::euclidean, 3)), psi);
    const Vec x = point({0.3, -0.2, 0.4});
    CHECK(riemann_symmetries(curvature_package(*clean, x).riemann).bianchi < 1e-6);
    const auto model = make_tampered_model(clean);
    const auto rep = riemann_symmetries(curvature_package(*model, x).riemann);
    CHECK(rep.bianchi > 1e-2);
    CHECK(rep.max() > 1e-2);
}

TEST_CASE("non positive definite metrics and bad specs are rejected")
{
    auto s = spec_of(ModelKind::euclidean, 5);
    CHECK_THROWS_AS(make_model(s), ValidationError);
    auto t = spec_of(ModelKind::flat_torus, 2);
    t.periods = {1.0};
    CHECK_THROWS_AS(make_model(t), ValidationError);
    const auto h = make_model(spec_of(ModelKind::hyperbolic, 2));
    CHECK_THROWS_AS(curvature_package(*h, point({0.0, -1.0})), StepError);
}

TEST_CASE("conformal constant factor rescales curvature")
{
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::constant;
    psi.amplitude = 0.5;
    const auto model = make_conformal(make_model(spec_of(ModelKind::hyperbolic, 2)), psi);
    const auto pkg = curvature_package(*model, point({0.0, 1.0}));
    CHECK(block_of(pkg.weitzenbock, 2, 1)(0, 0) == doctest::Approx(-std::exp(-1.0)).epsilon(1e-6));
}
