#include "scenario.hpp"

#include "hodgemc/differential.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <locale>
#include <set>
#include <sstream>

namespace hodgemc::cli {

namespace {

// ------------------------------------------------------------------ schema walker

class Fields {
public:
    Fields(const YAML::Node& node, std::string path, std::set<std::string> allowed)
        : node_(node), path_(std::move(path))
    {
        if (!node_.IsMap()) throw ValidationError("config: '" + where() + "' must be a table");
        for (const auto& kv : node_) {
            const std::string key = kv.first.as<std::string>();
            if (!allowed.count(key)) throw ValidationError("config: unknown key '" + join(key) + "'");
        }
    }

    bool has(const std::string& key) const { return node_[key].IsDefined() && !node_[key].IsNull(); }

    YAML::Node sub(const std::string& key) const
    {
        if (!has(key)) throw ValidationError("config: missing required field '" + join(key) + "'");
        return node_[key];
    }

    template <class T>
    T req(const std::string& key) const
    {
        return convert<T>(sub(key), join(key));
    }

    template <class T>
    T opt(const std::string& key, T fallback) const
    {
        return has(key) ? convert<T>(node_[key], join(key)) : fallback;
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    static T convert(const YAML::Node& n, const std::string& where)
    {
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            throw ValidationError("config: field '" + where + "' has the wrong type");
        }
    }

private:
    std::string where() const { return path_.empty() ? "<root>" : path_; }
    YAML::Node node_;
    std::string path_;
};

std::vector<double> number_list(const YAML::Node& n, const std::string& where)
{
    if (n.IsScalar()) return {Fields::convert<double>(n, where)};
    if (!n.IsSequence()) throw ValidationError("config: field '" + where + "' must be a number or a list");
    std::vector<double> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(Fields::convert<double>(n[i], where));
    return out;
}

std::vector<int> int_list(const YAML::Node& n, const std::string& where)
{
    if (!n.IsSequence()) throw ValidationError("config: field '" + where + "' must be a list");
    std::vector<int> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(Fields::convert<int>(n[i], where));
    return out;
}

ModelSpec parse_model(const YAML::Node& n, const std::string& path)
{
    const Fields f(n, path, {"kind", "m", "radius", "periods", "derivatives", "h_fd"});
    ModelSpec s;
    s.kind = model_kind_from_string(f.req<std::string>("kind"));
    if (s.kind == ModelKind::conformal)
        throw ValidationError("config: '" + f.join("kind") + "' must name a base model; use h_model.conformal");
    s.m = f.req<int>("m");
    if (s.m < 1 || s.m > kMaxDim) throw ValidationError("config: '" + f.join("m") + "' must be between 1 and 4");
    s.radius = f.opt<double>("radius", 1.0);
    if (f.has("periods")) s.periods = number_list(f.sub("periods"), f.join("periods"));
    if (s.kind == ModelKind::flat_torus && s.periods.empty()) s.periods.assign(s.m, 1.0);
    const std::string d = f.opt<std::string>("derivatives", "analytic");
    if (d == "analytic") {
        s.mode = DerivMode::analytic;
    } else if (d == "finite_difference") {
        s.mode = DerivMode::finite_difference;
    } else {
        throw ValidationError("config: '" + f.join("derivatives") + "' must be analytic or finite_difference");
    }
    s.h_fd = f.opt<double>("h_fd", 1e-4);
    return s;
}

ConformalFactor parse_factor(const YAML::Node& n, const std::string& path, int m)
{
    const Fields f(n, path, {"family", "amplitude", "width", "center"});
    ConformalFactor c;
    const std::string fam = f.req<std::string>("family");
    if (fam == "gaussian") {
        c.family = ConformalFactor::Family::gaussian;
    } else if (fam == "constant") {
        c.family = ConformalFactor::Family::constant;
    } else if (fam == "spline") {
        c.family = ConformalFactor::Family::spline;
    } else {
        throw ValidationError("config: '" + f.join("family") + "' must be gaussian, constant or spline");
    }
    c.amplitude = f.req<double>("amplitude");
    c.width = f.opt<double>("width", 1.0);
    if (!(c.width > 0.0)) throw ValidationError("config: '" + f.join("width") + "' must be positive");
    c.center = Eigen::VectorXd::Zero(m);
    if (f.has("center")) {
        const std::vector<double> v = number_list(f.sub("center"), f.join("center"));
        if (static_cast<int>(v.size()) != m) throw ValidationError("config: '" + f.join("center") + "' needs m entries");
        for (int i = 0; i < m; ++i) c.center[i] = v[i];
    }
    return c;
}

FormSpec parse_form(const YAML::Node& n, const std::string& path)
{
    const Fields f(n, path, {"profile", "indices", "scale", "width", "center", "wavevector", "phase"});
    FormSpec a;
    a.profile = f.opt<std::string>("profile", "constant");
    static const std::set<std::string> profiles{"constant", "gaussian", "distance_gaussian", "fourier"};
    if (!profiles.count(a.profile))
        throw ValidationError("config: '" + f.join("profile") +
                              "' must be constant, gaussian, distance_gaussian or fourier");
    if (f.has("indices")) a.indices = int_list(f.sub("indices"), f.join("indices"));
    for (std::size_t i = 1; i < a.indices.size(); ++i)
        if (a.indices[i] <= a.indices[i - 1])
            throw ValidationError("config: '" + f.join("indices") + "' must be strictly increasing");
    a.scale = f.opt<double>("scale", 1.0);
    a.width = f.opt<double>("width", 1.0);
    if (!(a.width > 0.0)) throw ValidationError("config: '" + f.join("width") + "' must be positive");
    if (f.has("center")) a.center = number_list(f.sub("center"), f.join("center"));
    if (f.has("wavevector")) a.wavevector = number_list(f.sub("wavevector"), f.join("wavevector"));
    a.phase = f.opt<double>("phase", 0.0);
    return a;
}

PipelineSpec parse_pipeline(const YAML::Node& n, const std::string& path)
{
    if (!n.IsMap() || !n["kind"].IsDefined())
        throw ValidationError("config: missing required field '" + path + ".kind'");
    const std::string kind = Fields::convert<std::string>(n["kind"], path + ".kind");
    std::set<std::string> allowed{"kind"};
    if (kind == "paths") {
        allowed.insert({"x", "count"});
    } else if (kind == "semigroup" || kind == "bounds") {
        allowed.insert({"x", "alpha"});
    } else if (kind == "bismut") {
        allowed.insert({"x", "alpha", "op", "v", "direction"});
    } else if (kind == "criterion") {
        allowed.insert({"expect_finite"});
    } else if (kind == "kato") {
        allowed.insert({"potential", "potential_center"});
    } else {
        throw ValidationError("config: '" + path + ".kind' must be paths, semigroup, bismut, bounds, criterion or kato");
    }
    const Fields f(n, path, allowed);
    PipelineSpec p;
    p.kind = kind;
    if (f.has("x")) p.x = number_list(f.sub("x"), f.join("x"));
    if (kind == "semigroup" || kind == "bismut" || kind == "bounds") p.alpha = parse_form(f.sub("alpha"), f.join("alpha"));
    if (kind == "bismut") {
        p.op = f.opt<std::string>("op", "d");
        if (p.op != "d" && p.op != "delta" && p.op != "nabla")
            throw ValidationError("config: '" + f.join("op") + "' must be d, delta or nabla");
        if (f.has("v")) p.v_indices = int_list(f.sub("v"), f.join("v"));
        p.direction = f.opt<int>("direction", 0);
    }
    p.count = f.opt<int>("count", 1);
    if (p.count < 1) throw ValidationError("config: '" + f.join("count") + "' must be at least 1");
    p.expect_finite = f.opt<bool>("expect_finite", false);
    p.potential = f.opt<std::string>("potential", "weitzenbock");
    if (p.potential != "weitzenbock" && p.potential != "coulomb")
        throw ValidationError("config: '" + f.join("potential") + "' must be weitzenbock or coulomb");
    if (f.has("potential_center")) p.potential_center = number_list(f.sub("potential_center"), f.join("potential_center"));
    return p;
}

Vec to_vec(const std::vector<double>& v)
{
    Vec x(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
    return x;
}

Vec default_point(const Model& model)
{
    const int a = model.ambient_dim();
    Vec x = Vec::Zero(a);
    const ModelKind k = model.base_model() ? model.base_model()->kind() : model.kind();
    if (k == ModelKind::sphere || k == ModelKind::hyperbolic) x[a - 1] = 1.0;
    return x;
}

Vec point_of(const Model& model, const std::vector<double>& x, const std::string& where)
{
    if (x.empty()) return default_point(model);
    if (static_cast<int>(x.size()) != model.ambient_dim())
        throw ValidationError("config: '" + where + "' needs " + std::to_string(model.ambient_dim()) + " coordinates");
    const Vec p = to_vec(x);
    if (!model.valid_point(p)) throw ValidationError("config: '" + where + "' is not a point of the model");
    return p;
}

FormValue basis_form(int m, const std::vector<int>& idx, FrameTag tag)
{
    for (int i : idx)
        if (i < 0 || i >= m) throw ValidationError("form index out of range");
    unsigned mask = 0;
    for (int i : idx) mask |= 1u << i;
    FormValue v = FormValue::zero(m, tag);
    v.coeffs[ExteriorAlgebra::of(m).index(mask)] = 1.0;
    v.refresh_mask();
    return v;
}

nlohmann::json model_json(const Model& model)
{
    const ModelSpec& s = model.spec();
    nlohmann::json j{{"kind", to_string(model.kind())}, {"m", model.dim()}};
    if (model.base_model()) {
        j["base"] = model_json(*model.base_model());
        const char* fam = s.psi.family == ConformalFactor::Family::gaussian ? "gaussian"
                          : s.psi.family == ConformalFactor::Family::spline ? "spline"
                                                                             : "constant";
        std::vector<double> c(s.psi.center.data(), s.psi.center.data() + s.psi.center.size());
        j["psi"] = {{"family", fam}, {"amplitude", s.psi.amplitude}, {"width", s.psi.width}, {"center", c}};
    } else {
        if (model.kind() == ModelKind::sphere || model.kind() == ModelKind::hyperbolic) j["radius"] = s.radius;
        if (model.kind() == ModelKind::flat_torus) j["periods"] = s.periods;
    }
    j["derivatives"] = s.mode == DerivMode::analytic ? "analytic" : "finite_difference";
    return j;
}

std::string csv_double(double v)
{
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

// ------------------------------------------------------------------ parsing

Scenario parse_scenario(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ValidationError(std::string("config: parse error: ") + e.what());
    }
    const Fields f(root, "",
                   {"id", "seed", "workers", "output", "s", "g_model", "h_model", "estimator", "quadrature", "kato",
                    "pipelines"});
    Scenario sc;
    sc.id = f.req<std::string>("id");
    sc.seed = f.req<std::uint64_t>("seed");
    sc.workers = f.opt<int>("workers", 1);
    if (sc.workers < 1) throw ValidationError("config: 'workers' must be at least 1");
    sc.output = f.opt<std::string>("output", "out/" + sc.id);
    sc.s = number_list(f.sub("s"), "s");
    if (sc.s.empty()) throw ValidationError("config: 's' must not be empty");
    for (double s : sc.s)
        if (!(s > 0.0)) throw ValidationError("config: every entry of 's' must be positive");
    sc.g = parse_model(f.sub("g_model"), "g_model");

    if (f.has("h_model")) {
        const YAML::Node hn = f.sub("h_model");
        if (hn.IsMap() && hn["conformal"].IsDefined()) {
            const Fields hf(hn, "h_model", {"conformal"});
            ModelSpec h;
            h.kind = ModelKind::conformal;
            h.m = sc.g.m;
            h.mode = sc.g.mode;
            h.h_fd = sc.g.h_fd;
            h.base = std::make_shared<ModelSpec>(sc.g);
            h.psi = parse_factor(hf.sub("conformal"), "h_model.conformal", sc.g.m);
            sc.h = h;
        } else {
            sc.h = parse_model(hn, "h_model");
        }
    }

    if (f.has("estimator")) {
        const Fields e(f.sub("estimator"), "estimator", {"n_paths", "dt", "mode", "c_loc", "substeps"});
        const long long n = e.opt<long long>("n_paths", 10000);
        if (n < 1) throw ValidationError("config: 'estimator.n_paths' must be at least 1");
        sc.estimator.n_paths = static_cast<std::size_t>(n);
        sc.estimator.dt = e.opt<double>("dt", 1e-3);
        if (!(sc.estimator.dt > 0.0)) throw ValidationError("config: 'estimator.dt' must be positive");
        sc.estimator.mode = ell_mode_from_string(e.opt<std::string>("mode", "compact-linear"));
        sc.estimator.c_loc = e.opt<double>("c_loc", 1.0);
        sc.estimator.substeps = e.opt<int>("substeps", 1);
        if (sc.estimator.substeps < 1) throw ValidationError("config: 'estimator.substeps' must be at least 1");
    }

    if (f.has("quadrature")) {
        const Fields q(f.sub("quadrature"), "quadrature",
                       {"cell", "half_width", "max_half_width", "tail_tol", "n_ball", "quasi_isometry",
                        "delta_nabla_bound", "center"});
        QuadSpec& Q = sc.quadrature;
        Q.cell = q.opt<double>("cell", Q.cell);
        Q.half_width = q.opt<double>("half_width", Q.half_width);
        Q.max_half_width = q.opt<double>("max_half_width", Q.max_half_width);
        Q.tail_tol = q.opt<double>("tail_tol", Q.tail_tol);
        Q.n_ball = q.opt<int>("n_ball", Q.n_ball);
        if (q.has("quasi_isometry")) {
            Q.quasi_isometry = q.req<double>("quasi_isometry");
            sc.quasi_isometry_declared = true;
        }
        Q.delta_nabla_bound = q.opt<double>("delta_nabla_bound", 0.0);
        if (q.has("center")) Q.center = to_vec(number_list(q.sub("center"), "quadrature.center"));
        if (!(Q.cell > 0.0) || Q.n_ball < 1) throw ValidationError("config: quadrature cell and n_ball must be positive");
    }

    sc.kato.t_grid = {0.025, 0.05, 0.1};
    sc.kato.n_paths = 2000;
    sc.kato.dt = 0.0125;
    if (f.has("kato")) {
        const Fields k(f.sub("kato"), "kato", {"t_grid", "n_paths", "dt", "x_samples"});
        if (k.has("t_grid")) sc.kato.t_grid = number_list(k.sub("t_grid"), "kato.t_grid");
        const long long n = k.opt<long long>("n_paths", 2000);
        if (n < 1) throw ValidationError("config: 'kato.n_paths' must be at least 1");
        sc.kato.n_paths = static_cast<std::size_t>(n);
        sc.kato.dt = k.opt<double>("dt", sc.kato.dt);
        if (k.has("x_samples")) {
            const YAML::Node xs = k.sub("x_samples");
            if (!xs.IsSequence()) throw ValidationError("config: 'kato.x_samples' must be a list of points");
            for (std::size_t i = 0; i < xs.size(); ++i) sc.kato.x_samples.push_back(to_vec(number_list(xs[i], "kato.x_samples")));
        }
    }

    const YAML::Node pl = f.sub("pipelines");
    if (!pl.IsSequence() || pl.size() == 0) throw ValidationError("config: 'pipelines' must be a non-empty list");
    for (std::size_t i = 0; i < pl.size(); ++i)
        sc.pipelines.push_back(parse_pipeline(pl[i], "pipelines[" + std::to_string(i) + "]"));
    return sc;
}

Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

// ------------------------------------------------------------------ forms

ModelForm make_form(const FormSpec& spec, const ModelPtr& model)
{
    const int a = model->ambient_dim();
    const FormValue basis = basis_form(a, spec.indices, FrameTag::coordinate);
    Vec center = Vec::Zero(a);
    if (!spec.center.empty()) {
        if (static_cast<int>(spec.center.size()) != a) throw ValidationError("alpha.center has the wrong length");
        center = to_vec(spec.center);
    } else if (spec.profile == "distance_gaussian") {
        center = default_point(*model);
    }
    Vec k = Vec::Zero(a);
    if (!spec.wavevector.empty()) {
        if (static_cast<int>(spec.wavevector.size()) != a) throw ValidationError("alpha.wavevector has the wrong length");
        k = to_vec(spec.wavevector);
    }
    if (spec.profile == "distance_gaussian" && !model->has_distance())
        throw ValidationError("alpha profile distance_gaussian needs a model with a distance");
    const double w2 = spec.width * spec.width, sc = spec.scale, ph = spec.phase;
    const std::string profile = spec.profile;
    return [=](const Vec& p) {
        double v = sc;
        if (profile == "gaussian") {
            v *= std::exp(-(p - center).squaredNorm() / (2.0 * w2));
        } else if (profile == "distance_gaussian") {
            const double d = model->distance(p, center);
            v *= std::exp(-d * d / (2.0 * w2));
        } else if (profile == "fourier") {
            v *= std::cos(2.0 * M_PI * k.dot(p) + ph);
        }
        return cplx(v) * basis;
    };
}

std::uint64_t derive_seed(std::uint64_t master, std::size_t p, std::size_t j)
{
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (1 + (static_cast<std::uint64_t>(p) << 20) + j);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

nlohmann::json kato_json(const KatoReport& r)
{
    return {{"t", r.t},
            {"estimate", r.estimate},
            {"se", r.se},
            {"argsup", r.argsup},
            {"exp_estimate", r.exp_estimate},
            {"exp_se", r.exp_se},
            {"intercept", r.intercept},
            {"intercept_se", r.intercept_se},
            {"c_gamma", r.c_gamma},
            {"gamma", r.gamma},
            {"verdict", to_string(r.verdict)},
            {"note", r.note}};
}

std::string paths_csv(const Model& model, const Vec& x, double s, double dt, std::uint64_t seed, int count)
{
    const int a = model.ambient_dim(), m = model.dim();
    std::ostringstream os;
    os << "path,step,t";
    for (int i = 0; i < a; ++i) os << ",x" << i;
    for (int i = 0; i < m; ++i) os << ",dB" << i;
    os << ",Q_frobenius\n";
    for (int p = 0; p < count; ++p) {
        const PathSample path = sample_path(model, x, s, dt, seed, static_cast<std::uint64_t>(p));
        for (std::size_t n = 0; n < path.points.size(); ++n) {
            os << p << ',' << n << ',' << csv_double(path.t[n]);
            for (int i = 0; i < a; ++i) os << ',' << csv_double(path.points[n].x[i]);
            for (int i = 0; i < m; ++i) os << ',' << (n < path.dB.size() ? csv_double(path.dB[n][i]) : std::string("0"));
            os << ',' << (n < path.Q.size() ? csv_double(path.Q[n].norm()) : std::string("nan")) << '\n';
        }
    }
    return os.str();
}

// ------------------------------------------------------------------ running

RunResult run_scenario(const Scenario& sc, const RunOptions& opts)
{
    RunResult out;
    const std::uint64_t master = opts.seed_override.value_or(sc.seed);
    const int workers = opts.workers.value_or(sc.workers);
    if (workers < 1) throw ValidationError("workers must be at least 1");

    const ModelPtr g = make_model(sc.g);
    ModelPtr h = g;
    if (sc.h) h = sc.h->kind == ModelKind::conformal ? make_conformal(g, sc.h->psi) : make_model(*sc.h);

    std::optional<KatoVerdict> verdict;
    nlohmann::json results = nlohmann::json::array();

    auto estimator_opts = [&](std::uint64_t seed) {
        EstimatorOptions e = sc.estimator;
        e.seed = seed;
        e.workers = workers;
        e.kato = verdict;
        e.allow_kato_override = opts.allow_kato_override;
        return e;
    };
    auto kato_opts = [&](std::uint64_t seed, const Model& model) {
        KatoOptions k = sc.kato;
        k.seed = seed;
        k.workers = workers;
        if (k.x_samples.empty()) k.x_samples = {default_point(model)};
        return k;
    };

    for (std::size_t p = 0; p < sc.pipelines.size(); ++p) {
        const PipelineSpec& pl = sc.pipelines[p];
        const std::string where = "pipelines[" + std::to_string(p) + "]";
        for (std::size_t j = 0; j < sc.s.size(); ++j) {
            const double s = sc.s[j];
            const std::uint64_t seed = derive_seed(master, p, j);
            nlohmann::json rec{{"pipeline", p}, {"kind", pl.kind}, {"s", s}, {"seed", seed}};

            if (pl.kind == "paths") {
                const Vec x = point_of(*g, pl.x, where + ".x");
                const std::string name = "paths_p" + std::to_string(p) + "_s" + std::to_string(j) + ".csv";
                out.tables.push_back({name, paths_csv(*g, x, s, sc.estimator.dt, seed, pl.count)});
                rec["table"] = name;
                rec["count"] = pl.count;
                rec["dt"] = sc.estimator.dt;
            } else if (pl.kind == "semigroup") {
                const Vec x = point_of(*g, pl.x, where + ".x");
                rec["result"] = semigroup_estimate(*g, make_form(pl.alpha, g), x, s, estimator_opts(seed));
            } else if (pl.kind == "bismut") {
                const Vec x = point_of(*g, pl.x, where + ".x");
                const ModelForm alpha = make_form(pl.alpha, g);
                const int m = g->dim();
                const EstimatorOptions eo = estimator_opts(seed);
                if (pl.op == "d") {
                    rec["result"] = bismut_d(*g, alpha, x, s, basis_form(m, pl.v_indices, FrameTag::orthonormal), eo);
                } else if (pl.op == "delta") {
                    rec["result"] = bismut_delta(*g, alpha, x, s, basis_form(m, pl.v_indices, FrameTag::orthonormal), eo);
                } else {
                    if (pl.direction < 0 || pl.direction >= m) throw ValidationError("config: '" + where + ".direction' out of range");
                    const FormValue th = basis_form(m, pl.v_indices, FrameTag::orthonormal);
                    rec["result"] = bismut_nabla(*g, alpha, x, s,
                                                 MixedTensor::single(m, pl.direction, th, static_cast<int>(pl.v_indices.size())), eo);
                }
                rec["op"] = pl.op;
            } else if (pl.kind == "bounds") {
                const Vec x = point_of(*g, pl.x, where + ".x");
                const ModelForm alpha = make_form(pl.alpha, g);
                const Constants c = resolve_constants(*g, kato_opts(seed, *g));
                QuadSpec q = sc.quadrature;
                q.workers = workers;
                const double l2 = form_l2_norm(*g, alpha, q);
                const LocalCurvature lk = local_K(*g, x, q.n_ball);
                const PhiValue ph = phi(*g, x, s);
                nlohmann::json per_degree = nlohmann::json::array();
                for (int k = 0; k <= g->dim(); ++k)
                    per_degree.push_back({{"k", k}, {"Kbar", lk.Kbar_k[k]}, {"Kunder", lk.Kunder_k[k]},
                                          {"psi_k", psi_k(lk, k, s, c)}});
                rec["constants"] = c;
                rec["D"] = c.D(s);
                rec["C"] = c.C(g->dim(), std::max(0.0, -lk.Kunder));
                rec["local"] = {{"Kbar", lk.Kbar},         {"Kunder", lk.Kunder},  {"nabla_R", lk.nabla_R},
                                {"points", lk.points},     {"per_degree", per_degree},
                                {"gallot_meyer_slack", lk.gallot_meyer_slack}};
                rec["psi"] = psi(lk, s, c);
                rec["xi"] = xi(lk, s, c);
                rec["theta"] = theta(lk);
                rec["phi"] = {{"value", ph.value}, {"tail", ph.tail}, {"upper_envelope", ph.upper_envelope},
                              {"method", ph.method}};
                rec["alpha_l2"] = {{"value", l2}, {"tail_tolerance", q.tail_tol}};
                rec["deterministic_tolerance"] = 1e-12;
                rec["check"] = gradient_bound_check(*g, alpha, pl.alpha.degree(), x, s, l2, c, estimator_opts(seed));
            } else if (pl.kind == "criterion") {
                QuadSpec q = sc.quadrature;
                q.workers = workers;
                if (!sc.quasi_isometry_declared) {
                    if (h == g) {
                        q.quasi_isometry = 1.0;
                    } else if (h->kind() == ModelKind::conformal && h->base_model() == g.get()) {
                        q.quasi_isometry = std::exp(2.0 * h->spec().psi.sup_abs());
                    } else {
                        throw ValidationError("config: 'quadrature.quasi_isometry' must be declared for this pair");
                    }
                }
                const Constants cg = resolve_constants(*g, kato_opts(seed, *g));
                const Constants ch = h == g ? cg : resolve_constants(*h, kato_opts(seed, *h));
                const BoundReport r = criterion_integral(*g, *h, s, q, cg, ch);
                const std::string name = "criterion_p" + std::to_string(p) + "_s" + std::to_string(j) + ".csv";
                std::ostringstream csv;
                write_csv(csv, r);
                out.tables.push_back({name, csv.str()});
                rec["report"] = r;
                rec["table"] = name;
                rec["expect_finite"] = pl.expect_finite;
                if (pl.expect_finite && r.verdict != "finite") {
                    out.exit_code = kExitDivergent;
                    out.diagnostics += "criterion verdict at s=" + csv_double(s) + " is " + r.verdict + "\n";
                }
            } else if (pl.kind == "kato") {
                KatoOptions k = kato_opts(seed, *g);
                KatoReport r;
                if (pl.potential == "weitzenbock") {
                    r = kato_test(*g, [&](const Vec& y) { return weitzenbock_negative_part(*g, y); }, k);
                    verdict = r.verdict;
                } else {
                    if (g->kind() != ModelKind::euclidean) throw ValidationError("config: coulomb potential needs a euclidean model");
                    const Vec c = pl.potential_center.empty() ? Vec(Vec::Zero(g->dim())) : to_vec(pl.potential_center);
                    if (c.size() != g->dim()) throw ValidationError("config: '" + where + ".potential_center' has the wrong length");
                    r = kato_test(*g, [c](const Vec& y) { return 1.0 / (y - c).norm(); }, k);
                }
                rec["potential"] = pl.potential;
                rec["result"] = kato_json(r);
            }
            results.push_back(std::move(rec));
        }
    }

    out.report = {{"id", sc.id},
                  {"seed", master},
                  {"s", sc.s},
                  {"g_model", model_json(*g)},
                  {"h_model", model_json(*h)},
                  {"estimator",
                   {{"n_paths", sc.estimator.n_paths},
                    {"dt", sc.estimator.dt},
                    {"mode", to_string(sc.estimator.mode)},
                    {"c_loc", sc.estimator.c_loc},
                    {"substeps", sc.estimator.substeps},
                    {"se_multiplier", 3.0}}},
                  {"results", results},
                  {"exit_code", out.exit_code}};
    return out;
}

std::string dump_report(const nlohmann::json& report) { return report.dump(2) + "\n"; }

void write_outputs(const RunResult& r, const std::string& dir, const nlohmann::json& metadata)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream os(fs::path(dir) / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + name);
        os << content;
    };
    write("report.json", dump_report(r.report));
    for (const Table& t : r.tables) write(t.name, t.content);
    write("metadata.json", metadata.dump(2) + "\n");
}

}  // namespace hodgemc::cli
