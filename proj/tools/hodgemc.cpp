#include "scenario.hpp"
#include "selftest.hpp"

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

using namespace hodgemc;
using namespace hodgemc::cli;

namespace {

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

template <class F>
int guarded(F body)
{
    try {
        return body();
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const YAML::Exception& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hodgemc: Monte Carlo Bismut estimators and gradient bounds on model manifolds"};
    app.require_subcommand(1);

    std::string config, output, level = "quick", json_out;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> workers;
    bool allow_kato = false, tampered = false;
    double n_divisor = 1.0;

    auto* run = app.add_subcommand("run", "Execute a scenario file");
    run->add_option("--config", config, "Scenario file")->required();
    run->add_option("--seed-override", seed_override, "Replace the master seed");
    run->add_option("--workers", workers, "Worker threads (results do not depend on this)");
    run->add_option("--output", output, "Output directory");
    run->add_flag("--allow-kato-override", allow_kato, "Run estimators even when the Kato verdict is 'neither'");

    auto* self = app.add_subcommand("selftest", "Run the built-in oracle checks");
    self->add_option("--level", level, "quick | full")->check(CLI::IsMember({"quick", "full"}));
    self->add_option("--n-divisor", n_divisor, "Divide Monte Carlo path counts (full level)");
    self->add_option("--workers", workers, "Worker threads");
    self->add_option("--seed-override", seed_override, "Replace the selftest seed");
    self->add_option("--output", json_out, "Write the JSON report here instead of stdout");
    self->add_flag("--tampered", tampered, "Use the tampered-Christoffel fixture (must fail)");

    std::string model_kind = "sphere";
    int m = 2, count = 1;
    double s = 1.0, dt = 1e-2;
    std::uint64_t seed = 1;
    std::vector<double> x;
    auto* dump = app.add_subcommand("paths-dump", "Write sampled paths as CSV");
    dump->add_option("--config", config, "Scenario file; the g_model, estimator dt and first s are used");
    dump->add_option("--model", model_kind, "Model kind when no config is given");
    dump->add_option("--m", m, "Dimension when no config is given");
    dump->add_option("--s", s, "Horizon when no config is given");
    dump->add_option("--dt", dt, "Step when no config is given");
    dump->add_option("--seed", seed, "Seed when no config is given");
    dump->add_option("--seed-override", seed_override, "Replace the seed");
    dump->add_option("--x", x, "Start point (default: model origin)");
    dump->add_option("--count", count, "Number of paths");
    dump->add_option("--output", output, "CSV file (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    if (*run) {
        return guarded([&] {
            const Scenario sc = load_scenario(config);
            RunOptions ro;
            ro.seed_override = seed_override;
            ro.workers = workers;
            ro.allow_kato_override = allow_kato;
            const std::string dir = output.empty() ? sc.output : output;
            const std::string started = utc_now();
            const auto t0 = std::chrono::steady_clock::now();
            const RunResult r = run_scenario(sc, ro);
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_outputs(r, dir,
                          {{"config", config},
                           {"started_utc", started},
                           {"wall_seconds", wall},
                           {"workers", workers.value_or(sc.workers)}});
            std::cerr << r.diagnostics;
            std::cout << dir << "/report.json\n";
            return r.exit_code;
        });
    }

    if (*self) {
        return guarded([&] {
            SelftestOptions so;
            so.level = level;
            so.n_divisor = n_divisor;
            so.tampered = tampered;
            so.workers = workers.value_or(1);
            if (seed_override) so.seed = *seed_override;
            const SelftestResult r = run_selftest(so);
            const std::string text = r.report.dump(2) + "\n";
            if (json_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream(json_out) << text;
            }
            for (const auto& f : r.report["failures"]) std::cerr << "FAILED " << f.get<std::string>() << '\n';
            std::cerr << r.report["total"].get<int>() - r.failed << "/" << r.report["total"].get<int>() << " checks passed\n";
            return r.failed == 0 ? kExitOk : 1;
        });
    }

    return guarded([&] {
        ModelPtr model;
        Vec x0;
        if (!config.empty()) {
            const Scenario sc = load_scenario(config);
            model = make_model(sc.g);
            s = sc.s.front();
            dt = sc.estimator.dt;
            seed = sc.seed;
        } else {
            ModelSpec spec;
            spec.kind = model_kind_from_string(model_kind);
            spec.m = m;
            if (spec.kind == ModelKind::flat_torus) spec.periods.assign(m, 1.0);
            model = make_model(spec);
        }
        if (seed_override) seed = *seed_override;
        if (x.empty()) {
            x0 = Vec::Zero(model->ambient_dim());
            if (model->kind() == ModelKind::sphere || model->kind() == ModelKind::hyperbolic) x0[x0.size() - 1] = 1.0;
        } else {
            if (static_cast<int>(x.size()) != model->ambient_dim()) throw ValidationError("--x has the wrong length");
            x0 = Vec(static_cast<Eigen::Index>(x.size()));
            for (std::size_t i = 0; i < x.size(); ++i) x0[static_cast<Eigen::Index>(i)] = x[i];
            if (!model->valid_point(x0)) throw ValidationError("--x is not a point of the model");
        }
        if (count < 1) throw ValidationError("--count must be at least 1");
        const std::string csv = paths_csv(*model, x0, s, dt, seed, count);
        if (output.empty()) {
            std::cout << csv;
        } else {
            std::ofstream os(output, std::ios::binary);
            if (!os) throw std::runtime_error("cannot write " + output);
            os << csv;
        }
        return kExitOk;
    });
}
