#pragma once

#include "hodgemc/bismut.hpp"
#include "hodgemc/bounds.hpp"
#include "hodgemc/manifold.hpp"
#include "hodgemc/paths.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hodgemc::cli {

// Exit codes of the runner.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitDivergent = 4;

// Form field α = scale · profile(p) · (basis form on `indices`), components in chart (ambient on the sphere) coordinates.
struct FormSpec {
    std::string profile = "constant";  // constant | gaussian | distance_gaussian | fourier
    std::vector<int> indices;          // empty: a function
    double scale = 1.0;
    double width = 1.0;
    std::vector<double> center;
    std::vector<double> wavevector;
    double phase = 0.0;

    int degree() const { return static_cast<int>(indices.size()); }
};

ModelForm make_form(const FormSpec& spec, const ModelPtr& model);

struct PipelineSpec {
    std::string kind;  // paths | semigroup | bismut | bounds | criterion | kato
    std::vector<double> x;
    FormSpec alpha;
    std::string op = "d";        // bismut: d | delta | nabla
    std::vector<int> v_indices;  // bismut d/delta test form, or the Λ part of ξ for nabla
    int direction = 0;           // bismut nabla: tangent slot of ξ
    int count = 1;               // paths: number of dumped paths
    bool expect_finite = false;  // criterion
    std::string potential = "weitzenbock";  // kato: weitzenbock | coulomb
    std::vector<double> potential_center;
};

struct Scenario {
    std::string id;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string output;
    std::vector<double> s;
    ModelSpec g;
    std::optional<ModelSpec> h;  // full model on g's chart, or a conformal factor over g
    EstimatorOptions estimator;
    QuadSpec quadrature;
    bool quasi_isometry_declared = false;
    KatoOptions kato;
    std::vector<PipelineSpec> pipelines;
};

// Validates against the schema in configs/SCHEMA.md; unknown keys and missing required fields throw
// ValidationError naming the field.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

struct RunOptions {
    std::optional<std::uint64_t> seed_override;
    std::optional<int> workers;
    std::optional<std::string> output;
    bool allow_kato_override = false;
};

struct Table {
    std::string name;  // file name inside the output directory
    std::string content;
};

struct RunResult {
    int exit_code = kExitOk;
    nlohmann::json report;
    std::vector<Table> tables;
    std::string diagnostics;
};

// Executes every pipeline for every s; pure function of the scenario (no clocks, no worker dependence).
RunResult run_scenario(const Scenario& sc, const RunOptions& opts);

// Serialises the report with a fixed layout.
std::string dump_report(const nlohmann::json& report);

// Writes report.json, the tables and a metadata.json side file (timestamps, wall time, workers).
void write_outputs(const RunResult& r, const std::string& dir, const nlohmann::json& metadata);

// Substream seed of pipeline `p` at s-index `j`.
std::uint64_t derive_seed(std::uint64_t master, std::size_t p, std::size_t j);

// Paths table (one row per grid point) for paths-dump.
std::string paths_csv(const Model& model, const Vec& x, double s, double dt, std::uint64_t seed, int count);

nlohmann::json kato_json(const KatoReport& r);

}  // namespace hodgemc::cli
