#include "doctest.h"
#include "hodgemc/bismut.hpp"

#include <cmath>

using namespace hodgemc;

namespace {

ModelPtr model_of(ModelKind kind, int m)
{
    ModelSpec s;
    s.kind = kind;
    s.m = m;
    if (kind == ModelKind::flat_torus) s.periods.assign(m, 1.0);
    return make_model(s);
}

Vec point(std::initializer_list<double> v)
{
    Vec x(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double a : v) x[i++] = a;
    return x;
}

ModelForm scalar_field(int m, std::function<double(const Vec&)> f)
{
    return [m, f](const Vec& p) { return FormValue::scalar(m, f(p), FrameTag::coordinate); };
}

double gauss(const Vec& p) { return std::exp(-p.squaredNorm() / 2); }

// Heat flow of exp(−|x|²/2) under ½Δ in two dimensions.
double gauss_flow(const Vec& x, double s) { return std::exp(-x.squaredNorm() / (2 * (1 + s))) / (1 + s); }

double gauss_flow_d1(const Vec& x, double s) { return -x[0] / (1 + s) * gauss_flow(x, s); }

EstimatorOptions opts_of(std::size_t n, double dt, std::uint64_t seed)
{
    EstimatorOptions o;
    o.n_paths = n;
    o.dt = dt;
    o.seed = seed;
    return o;
}

bool within(cplx est, double se, double oracle, double k = 3.0)
{
    return std::abs(est.real() - oracle) <= k * se && std::abs(est.imag()) <= 1e-12;
}

}  // namespace

TEST_CASE("ell processes")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const PathSample p = sample_path(*e, point({0, 0}), 1.0, 1e-2, 3, 0);
    const FormValue v = FormValue::covector(2, 0);
    const EllProcess lin = make_ell(*e, EllMode::compact_linear, v, 1.0, point({0, 0}), p);
    CHECK(lin.phi[50] == doctest::Approx(0.5));
    CHECK(lin.at(50).coeffs[1].real() == doctest::Approx(0.5));
    CHECK(lin.phi.front() == 1.0);
    CHECK(lin.phi.back() == 0.0);
    CHECK(lin.energy == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lin.vanish_time == doctest::Approx(1.0));

    auto sphere = model_of(ModelKind::sphere, 2);
    ModelSpec cs;
    cs.kind = ModelKind::euclidean;
    cs.m = 2;
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::gaussian;
    psi.amplitude = 0.3;
    psi.center = Eigen::VectorXd::Zero(2);
    auto conf = make_conformal(make_model(cs), psi);
    const TimeGrid g = make_grid(1.0, 1e-2);
    CHECK_THROWS_AS(EllClock(*conf, EllMode::localized, 1.0, point({0, 0}), g), ModelError);
}

TEST_CASE("localized ell vanishes by the first exit from the unit ball")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0, 0});
    const FormValue v = FormValue::covector(2, 1);
    int exits = 0;
    for (int i = 0; i < 10000; ++i) {
        const PathSample p = sample_path(*e, x, 1.0, 1e-3, 41, i, {});
        const EllProcess ell = make_ell(*e, EllMode::localized, v, 1.0, x, p);
        const ExitRecord rec = exit_time(*e, p, x, 1.0);
        CHECK(ell.vanish_time <= 1.0);
        if (!rec.censored) {
            ++exits;
            const auto n = static_cast<std::size_t>(std::llround(rec.time / p.dt));
            CHECK(ell.phi[n] == 0.0);
            CHECK(ell.vanish_time <= rec.time);
        }
        CHECK(std::isfinite(ell.energy));
    }
    CHECK(exits > 1000);
}

TEST_CASE("semigroup of a constant is exact")
{
    auto sphere = model_of(ModelKind::sphere, 2);
    const EstimatorResult r = semigroup_estimate(*sphere, scalar_field(3, [](const Vec&) { return 1.0; }),
                                                 point({0, 0, 1}), 0.5, opts_of(200, 1e-2, 1));
    CHECK(r.value[0] == cplx(1.0, 0.0));
    CHECK(r.se[0] == 0.0);
    for (Eigen::Index i = 1; i < r.value.size(); ++i) CHECK(r.value[i] == cplx(0.0, 0.0));
}

TEST_CASE("semigroup of a gaussian on the plane")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    const EstimatorResult r = semigroup_estimate(*e, scalar_field(2, gauss), x, 0.5, opts_of(100000, 1e-2, 5));
    CHECK(within(r.value[0], r.se[0], gauss_flow(x, 0.5)));
}

TEST_CASE("semigroup domination on the sphere")
{
    auto sphere = model_of(ModelKind::sphere, 2);
    const Vec x = point({0.6, 0.0, 0.8});
    const double s = 0.5;
    // Constant ambient covector dX¹ restricted to the sphere; its pointwise norm is at most 1.
    const ModelForm alpha = [](const Vec&) { return FormValue::covector(3, 0, FrameTag::coordinate); };
    const auto o = opts_of(20000, 1e-3, 6);
    const EstimatorResult r = semigroup_estimate(*sphere, alpha, x, s, o);
    const EstimatorResult dom = domination_estimate(*sphere, alpha, 1, x, s, o);
    const auto& ext = ExteriorAlgebra::of(2);
    double mag = 0.0, se = 0.0;
    for (int i = 0; i < 2; ++i) {
        mag += std::norm(r.value[ext.degree_offset(1) + i]);
        se += r.se[ext.degree_offset(1) + i];
    }
    mag = std::sqrt(mag);
    CHECK(mag <= std::exp(-s / 2) + 3 * se);
    CHECK(mag <= dom.scalar().real() + 3 * (se + dom.scalar_se()));
    CHECK(dom.scalar().real() <= std::exp(-s / 2) + 1e-12);
}

TEST_CASE("exterior derivative estimator on the plane")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    const double s = 0.5;
    const auto f = scalar_field(2, gauss);
    const EstimatorResult r = bismut_d(*e, f, x, s, FormValue::covector(2, 0), opts_of(100000, 1e-2, 7));
    CHECK(within(r.scalar(), r.scalar_se(), gauss_flow_d1(x, s)));
    CHECK(gauss_flow_d1(x, s) == doctest::Approx(-0.2 / 1.5 * std::exp(-0.03)).epsilon(1e-12));
    const EstimatorResult r2 = bismut_d(*e, f, x, s, FormValue::covector(2, 1), opts_of(100000, 1e-2, 7));
    CHECK(within(r2.scalar(), r2.scalar_se(), 0.0));
    CHECK_THROWS_AS(bismut_d(*e, f, x, s, FormValue::scalar(2, 1.0), opts_of(10, 1e-2, 7)), ValidationError);
}

TEST_CASE("localized ell gives the same derivative")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    auto o = opts_of(50000, 2e-3, 8);
    o.mode = EllMode::localized;
    const EstimatorResult r = bismut_d(*e, scalar_field(2, gauss), x, 0.5, FormValue::covector(2, 0), o);
    CHECK(within(r.scalar(), r.scalar_se(), gauss_flow_d1(x, 0.5)));
    CHECK(r.mode == "localized");
}

TEST_CASE("derivative of a constant on the torus vanishes")
{
    auto t = model_of(ModelKind::flat_torus, 2);
    const auto one = scalar_field(2, [](const Vec&) { return 1.0; });
    const EstimatorResult r = bismut_d(*t, one, point({0.2, 0.7}), 0.5, FormValue::covector(2, 1), opts_of(20000, 1e-2, 2));
    CHECK(within(r.scalar(), r.scalar_se(), 0.0));
    const MixedTensor xi = MixedTensor::single(2, 0, FormValue::basis(2, {0, 1}), 2);
    const auto vol = [](const Vec&) { return FormValue::basis(2, {0, 1}, FrameTag::coordinate); };
    const EstimatorResult n = bismut_nabla(*t, vol, point({0.2, 0.7}), 0.5, xi, opts_of(20000, 1e-2, 2));
    CHECK(within(n.scalar(), n.scalar_se(), 0.0));
}

TEST_CASE("exterior derivative estimator agrees with a finite difference of the semigroup")
{
    auto t = model_of(ModelKind::flat_torus, 2);
    const auto f = scalar_field(2, [](const Vec& p) {
        const double a = 2 * M_PI * p[0], b = 2 * M_PI * p[1];
        return std::sin(a) + 0.5 * std::cos(a + b) + 0.3 * std::sin(2 * b);
    });
    const Vec x = point({0.31, 0.62});
    const double s = 0.05, h = 1e-3;
    const auto o = opts_of(40000, 1e-3, 13);
    for (int i = 0; i < 2; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const EstimatorResult up = semigroup_estimate(*t, f, xp, s, o);
        const EstimatorResult dn = semigroup_estimate(*t, f, xm, s, o);
        const double fd = (up.value[0].real() - dn.value[0].real()) / (2 * h);
        // Paths on the flat torus are translates of each other under common random numbers, so the
        // difference of the two runs is the run of the difference quotient, which carries its own SE.
        const auto quotient = scalar_field(2, [&](const Vec& p) {
            Vec pp = p, pm = p;
            pp[i] += h;
            pm[i] -= h;
            return (f(pp)[0].real() - f(pm)[0].real()) / (2 * h);
        });
        const EstimatorResult q = semigroup_estimate(*t, quotient, x, s, o);
        CHECK(q.value[0].real() == doctest::Approx(fd).epsilon(1e-6));
        const double fd_se = q.se[0];
        const EstimatorResult d = bismut_d(*t, f, x, s, FormValue::covector(2, i), o);
        CHECK(std::abs(d.scalar().real() - fd) <= 3 * std::hypot(d.scalar_se(), fd_se));
    }
}

TEST_CASE("codifferential estimator")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    const double s = 0.5;
    const ModelForm a = [](const Vec& p) { return cplx(gauss(p)) * FormValue::covector(2, 0, FrameTag::coordinate); };
    const EstimatorResult r = bismut_delta(*e, a, x, s, FormValue::scalar(2, 1.0), opts_of(100000, 1e-2, 9));
    CHECK(within(r.scalar(), r.scalar_se(), -gauss_flow_d1(x, s)));
    CHECK(r.degree == 1);

    const EstimatorResult z =
        bismut_delta(*e, scalar_field(2, gauss), x, s, FormValue::zero(2), opts_of(100, 1e-2, 9));
    CHECK(z.scalar() == cplx(0.0, 0.0));
    CHECK(z.scalar_se() == 0.0);
}

TEST_CASE("d and delta estimators are adjoint on the torus")
{
    auto t = model_of(ModelKind::flat_torus, 2);
    const double s = 0.1;
    const auto f = scalar_field(2, [](const Vec& p) { return std::sin(2 * M_PI * p[0]); });
    const ModelForm beta = [](const Vec& p) {
        return cplx(std::cos(2 * M_PI * p[0])) * FormValue::covector(2, 0, FrameTag::coordinate);
    };
    const int n = 6;
    double lhs = 0.0, rhs = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Vec x = point({(i + 0.5) / n, (j + 0.5) / n});
            const auto o = opts_of(20000, 1e-2, 100 + i * n + j);
            FormValue b = beta(x);
            b.frame = FrameTag::orthonormal;
            lhs += bismut_d(*t, f, x, s, b, o).scalar().real() / (n * n);
            rhs += f(x)[0].real() * bismut_delta(*t, beta, x, s, FormValue::scalar(2, 1.0), o).scalar().real() / (n * n);
        }
    const double exact = M_PI * std::exp(-2 * M_PI * M_PI * s);
    CHECK(lhs == doctest::Approx(rhs).epsilon(0.05));
    CHECK(lhs == doctest::Approx(exact).epsilon(0.05));
}

TEST_CASE("covariant derivative estimator reduces to d on functions")
{
    auto e = model_of(ModelKind::euclidean, 2);
    const Vec x = point({0.3, 0.0});
    const auto o = opts_of(50000, 1e-2, 10);
    const auto f = scalar_field(2, gauss);
    const FormValue v = cplx(0.6) * FormValue::covector(2, 0) + cplx(-0.8) * FormValue::covector(2, 1);
    const MixedTensor xi =
        MixedTensor::from_parts({FormValue::scalar(2, 0.6), FormValue::scalar(2, -0.8)}, 0);
    const EstimatorResult d = bismut_d(*e, f, x, 0.5, v, o);
    const EstimatorResult n = bismut_nabla(*e, f, x, 0.5, xi, o);
    CHECK(std::abs(d.scalar() - n.scalar()) <= 3 * std::hypot(d.scalar_se(), n.scalar_se()));
    CHECK(within(n.scalar(), n.scalar_se(), 0.6 * gauss_flow_d1(x, 0.5)));
}

TEST_CASE("covariant estimator on the sphere has no finite-variation term")
{
    auto sphere = model_of(ModelKind::sphere, 2);
    const ModelForm alpha = [](const Vec&) { return FormValue::covector(3, 0, FrameTag::coordinate); };
    const MixedTensor xi = MixedTensor::single(2, 1, FormValue::covector(2, 0), 1);
    const EstimatorResult r = bismut_nabla(*sphere, alpha, point({0.6, 0, 0.8}), 0.5, xi, opts_of(2000, 1e-2, 3));
    CHECK(r.fv_max == 0.0);
    CHECK(r.rho_max == 0.0);
    CHECK(std::isfinite(r.scalar().real()));
}

TEST_CASE("covariant estimator on a non-constant model records rho")
{
    ModelSpec base;
    base.kind = ModelKind::flat_torus;
    base.m = 2;
    base.periods = {1.0, 1.0};
    ConformalFactor psi;
    psi.family = ConformalFactor::Family::gaussian;
    psi.amplitude = 0.2;
    psi.width = 0.15;
    psi.center = Eigen::VectorXd::Constant(2, 0.5);
    auto model = make_conformal(make_model(base), psi);
    const ModelForm alpha = [](const Vec& p) {
        return cplx(std::sin(2 * M_PI * p[0])) * FormValue::covector(2, 1, FrameTag::coordinate);
    };
    const MixedTensor xi = MixedTensor::single(2, 0, FormValue::covector(2, 1), 1);
    const EstimatorResult r = bismut_nabla(*model, alpha, point({0.45, 0.5}), 0.1, xi, opts_of(256, 1e-2, 3));
    CHECK(r.rho_max > 0.0);
    CHECK(r.fv_max > 0.0);
    CHECK(std::isfinite(r.scalar().real()));
}

TEST_CASE("estimators are linear under common random numbers")
{
    auto sphere = model_of(ModelKind::sphere, 2);
    const ModelForm a1 = [](const Vec& p) { return cplx(p[0]) * FormValue::covector(3, 1, FrameTag::coordinate); };
    const ModelForm a2 = [](const Vec& p) { return cplx(p[2] * p[2]) * FormValue::covector(3, 2, FrameTag::coordinate); };
    const cplx ca(2.0, -1.0), cb(0.5, 0.0);
    const ModelForm mix = [&](const Vec& p) { return ca * a1(p) + cb * a2(p); };
    const auto o = opts_of(300, 1e-2, 4);
    const Vec x = point({0.6, 0.0, 0.8});
    const FormValue v = FormValue::basis(2, {0, 1});
    const cplx l = bismut_d(*sphere, mix, x, 0.3, v, o).scalar();
    const cplx r = ca * bismut_d(*sphere, a1, x, 0.3, v, o).scalar() + cb * bismut_d(*sphere, a2, x, 0.3, v, o).scalar();
    CHECK(std::abs(l - r) < 1e-12);
}

TEST_CASE("Kato gate and determinism")
{
    auto t = model_of(ModelKind::flat_torus, 2);
    const auto f = scalar_field(2, [](const Vec& p) { return std::cos(2 * M_PI * p[1]); });
    auto o = opts_of(1000, 1e-2, 12);
    o.kato = KatoVerdict::neither;
    CHECK_THROWS_AS(semigroup_estimate(*t, f, point({0.1, 0.1}), 0.2, o), KatoError);
    o.allow_kato_override = true;
    CHECK_NOTHROW(semigroup_estimate(*t, f, point({0.1, 0.1}), 0.2, o));

    auto o1 = opts_of(3000, 1e-2, 12), o8 = o1;
    o8.workers = 8;
    nlohmann::json j1 = bismut_d(*t, f, point({0.1, 0.1}), 0.2, FormValue::covector(2, 1), o1);
    nlohmann::json j8 = bismut_d(*t, f, point({0.1, 0.1}), 0.2, FormValue::covector(2, 1), o8);
    CHECK(j1.dump() == j8.dump());
}
