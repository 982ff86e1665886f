#include "scenario.hpp"
#include "selftest.hpp"

#include "hodgemc/bounds.hpp"
#include "hodgemc/manifold.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace hodgemc;

namespace {

struct PyModel {
    ModelPtr p;
};

Vec to_vec(const std::vector<double>& v)
{
    if (v.empty() || v.size() > static_cast<std::size_t>(kMaxAmbient)) throw ValidationError("point has the wrong length");
    Vec x(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
    return x;
}

Vec checked_point(const PyModel& m, const std::vector<double>& v)
{
    const Vec x = to_vec(v);
    if (x.size() != m.p->ambient_dim() || !m.p->valid_point(x)) throw ValidationError("not a point of the model");
    return x;
}

PyModel model(const std::string& kind, int m, double radius, std::vector<double> periods)
{
    ModelSpec s;
    s.kind = model_kind_from_string(kind);
    s.m = m;
    s.radius = radius;
    s.periods = std::move(periods);
    if (s.kind == ModelKind::flat_torus && s.periods.empty()) s.periods.assign(m, 1.0);
    return {make_model(s)};
}

PyModel conformal(const PyModel& base, const std::string& family, double amplitude, double width,
                  std::vector<double> center)
{
    ConformalFactor c;
    if (family == "gaussian") {
        c.family = ConformalFactor::Family::gaussian;
    } else if (family == "constant") {
        c.family = ConformalFactor::Family::constant;
    } else if (family == "spline") {
        c.family = ConformalFactor::Family::spline;
    } else {
        throw ValidationError("family must be gaussian, constant or spline");
    }
    c.amplitude = amplitude;
    c.width = width;
    c.center = Eigen::VectorXd::Zero(base.p->dim());
    for (std::size_t i = 0; i < center.size() && i < static_cast<std::size_t>(base.p->dim()); ++i) c.center[i] = center[i];
    return {make_conformal(base.p, c)};
}

Constants constants_of(const PyModel& m)
{
    if (m.p->constant_curvature() && !m.p->base_model()) return resolve_constants(*m.p, KatoOptions{});
    throw ValidationError("closed-form constants need a space form; use a scenario with a kato pipeline otherwise");
}

}  // namespace

PYBIND11_MODULE(_hodgemc, mod)
{
    py::register_exception<ValidationError>(mod, "ValidationError", PyExc_ValueError);
    py::register_exception<ModelError>(mod, "ModelError", PyExc_RuntimeError);
    py::register_exception<NumericalError>(mod, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<KatoError>(mod, "KatoError", PyExc_RuntimeError);

    py::class_<PyModel>(mod, "Model")
        .def_property_readonly("kind", [](const PyModel& m) { return std::string(to_string(m.p->kind())); })
        .def_property_readonly("dim", [](const PyModel& m) { return m.p->dim(); })
        .def_property_readonly("ambient_dim", [](const PyModel& m) { return m.p->ambient_dim(); })
        .def_property_readonly("compact", [](const PyModel& m) { return m.p->compact(); })
        .def("describe", [](const PyModel& m) { return m.p->describe(); })
        .def("valid_point", [](const PyModel& m, const std::vector<double>& x) { return m.p->valid_point(to_vec(x)); })
        .def("distance", [](const PyModel& m, const std::vector<double>& x, const std::vector<double>& y) {
            return m.p->distance(checked_point(m, x), checked_point(m, y));
        })
        .def("weitzenbock", [](const PyModel& m, const std::vector<double>& x) {
            return Eigen::MatrixXd(m.p->weitzenbock_at(m.p->frame_point(checked_point(m, x))));
        })
        .def("local_K", [](const PyModel& m, const std::vector<double>& x, int n_ball) {
            const LocalCurvature lk = local_K(*m.p, checked_point(m, x), n_ball);
            py::dict d;
            d["Kbar"] = lk.Kbar;
            d["Kunder"] = lk.Kunder;
            d["Kbar_k"] = lk.Kbar_k;
            d["Kunder_k"] = lk.Kunder_k;
            d["nabla_R"] = lk.nabla_R;
            d["points"] = lk.points;
            return d;
        }, py::arg("x"), py::arg("n_ball") = kBallPoints)
        .def("phi", [](const PyModel& m, const std::vector<double>& x, double s) {
            const PhiValue v = phi(*m.p, checked_point(m, x), s);
            py::dict d;
            d["value"] = v.value;
            d["tail"] = v.tail;
            d["upper_envelope"] = v.upper_envelope;
            d["method"] = v.method;
            return d;
        })
        .def("psi", [](const PyModel& m, const std::vector<double>& x, double s) {
            return psi(*m.p, checked_point(m, x), s, constants_of(m));
        })
        .def("xi", [](const PyModel& m, const std::vector<double>& x, double s) {
            return xi(*m.p, checked_point(m, x), s, constants_of(m));
        })
        .def("theta", [](const PyModel& m, const std::vector<double>& x) { return theta(*m.p, checked_point(m, x)); });

    mod.def("model", &model, py::arg("kind"), py::arg("m"), py::arg("radius") = 1.0,
            py::arg("periods") = std::vector<double>{});
    mod.def("conformal", &conformal, py::arg("base"), py::arg("family"), py::arg("amplitude"), py::arg("width") = 1.0,
            py::arg("center") = std::vector<double>{});
    mod.def("derive_seed", &cli::derive_seed);

    mod.def("run_scenario_json", [](const std::string& text, std::optional<std::uint64_t> seed, std::optional<int> workers) {
        const cli::Scenario sc = cli::parse_scenario(text);
        cli::RunOptions ro;
        ro.seed_override = seed;
        ro.workers = workers;
        cli::RunResult r;
        {
            py::gil_scoped_release release;
            r = cli::run_scenario(sc, ro);
        }
        py::dict tables;
        for (const auto& t : r.tables) tables[py::str(t.name)] = t.content;
        return py::make_tuple(r.exit_code, cli::dump_report(r.report), tables);
    }, py::arg("text"), py::arg("seed_override") = py::none(), py::arg("workers") = py::none());

    mod.def("selftest_json", [](const std::string& level, double n_divisor, bool tampered) {
        cli::SelftestOptions o;
        o.level = level;
        o.n_divisor = n_divisor;
        o.tampered = tampered;
        cli::SelftestResult r;
        {
            py::gil_scoped_release release;
            r = cli::run_selftest(o);
        }
        return py::make_tuple(r.failed, r.report.dump());
    }, py::arg("level") = "quick", py::arg("n_divisor") = 1.0, py::arg("tampered") = false);
}
