#pragma once

#include "hodgemc/manifold.hpp"
#include "hodgemc/rng.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hodgemc {

// Scalar function of a model point (chart coordinates, ambient for the sphere).
using ScalarField = std::function<double(const Vec& p)>;

// Stream tags: pipelines with equal tags see common random numbers.
inline constexpr std::uint32_t kTagPaths = 1;
inline constexpr std::uint32_t kTagEstimator = 2;
inline constexpr std::uint32_t kTagKato = 3;

struct TimeGrid {
    int steps = 0;
    double dt = 0.0;
};

// Uniform grid on [0, s] whose step is the largest s/n not exceeding the requested Δt.
TimeGrid make_grid(double s, double dt);

// ΔB ~ N(0, Δt I) built as the sum of `substeps` finer normals, so a run at Δt with
// substeps = 2 uses exactly the randomness of a run at Δt/2.
Vec draw_increment(PathRng& rng, int m, double dt, int substeps);

// Rolls the frame along Euler steps; visit(n, from, dB, to) returns false to stop early.
template <class Visit>
void walk(const Model& model, const FramePoint& start, const TimeGrid& grid, PathRng& rng, int substeps, Visit&& visit)
{
    FramePoint cur = start;
    const int m = model.dim();
    for (int n = 0; n < grid.steps; ++n) {
        const Vec dB = draw_increment(rng, m, grid.dt, substeps);
        FramePoint next = model.step(cur, dB, 1.0);
        if (!visit(n, cur, dB, next)) return;
        cur = std::move(next);
    }
}

enum class CurvatureSource { weitzenbock, weitzenbock_tilde };

// Pathwise damped transport dQ/dt = −½ ℛ Q (or ℛ̃ on T*M⊗Λ) restricted to selected degrees,
// each step multiplies by exp(−½Δt·ℛ̄) with ℛ̄ the average of the endpoint values (second order,
// and never above the Gronwall bound); the inverse follows d(Q⁻¹)/dt = ½ Q⁻¹ ℛ.
class DampedTransport {
public:
    DampedTransport(const Model& model, CurvatureSource source, std::uint32_t degree_mask, bool track_inverse = true,
                    bool check_gronwall = true);

    void start(const FramePoint& fp);
    void advance(const FramePoint& next, double dt);

    // Block of degree k (size C(m,k), or m·C(m,k) for ℛ̃ with the T*M slot outermost).
    const Eigen::MatrixXd& block(int k) const { return q_[k]; }
    const Eigen::MatrixXd& inverse_block(int k) const { return qinv_[k]; }
    // Assembled full matrix, identity on untracked degrees.
    Eigen::MatrixXd full() const;
    double gronwall_log_bound(int k) const { return log_bound_[k]; }
    // Throws NumericalError unless |Q^(k)|_op ≤ exp(−½∫ λ_min) up to a relative 1e-6 for every tracked k.
    void verify_gronwall() const;
    bool identity() const { return flat_; }
    std::uint32_t degree_mask() const { return mask_; }
    int block_rows(int k) const;
    // Row indices of the degree-k block inside the full matrix.
    std::vector<int> block_indices(int k) const;

private:
    void curvature_blocks(const FramePoint& fp, std::vector<Eigen::MatrixXd>& out) const;

    const Model& model_;
    CurvatureSource source_;
    std::uint32_t mask_;
    bool inverse_, check_, flat_, constant_, const_ready_ = false;
    int m_;
    std::vector<Eigen::MatrixXd> q_, qinv_, cur_, nxt_;
    std::vector<Eigen::MatrixXd> const_step_, const_step_inv_;
    std::vector<double> log_bound_, lmin_cur_;
    double const_dt_ = 0.0;
};

struct ExitRecord {
    Vec center;
    double radius = 0.0;
    double time = 0.0;  // first grid time outside the ball, or the horizon when censored
    bool censored = true;
};

struct FeynmanKac {
    double integral = 0.0;  // ∫₀ˢ w(X_r) dr
    double weight = 1.0;    // e^{−½∫w}
    bool clamped = false;
};

struct PathSample {
    double dt = 0.0;
    std::vector<double> t;
    std::vector<FramePoint> points;
    std::vector<Vec> dB;              // dB[n] moves points[n] to points[n+1]
    std::vector<Eigen::MatrixXd> Q;   // full 2^m matrices on the grid, when requested
    std::vector<Eigen::MatrixXd> Qt;  // full m·2^m matrices on the grid, when requested
    FeynmanKac fk;
    std::vector<ExitRecord> exits;
    std::uint64_t seed = 0, substream = 0;
};

struct PathOptions {
    bool transport = true;
    bool transport_tilde = false;
    ScalarField w;                                // Feynman–Kac potential, optional
    std::vector<std::pair<Vec, double>> balls;    // exit-time registrations
    int substeps = 1;
    std::uint32_t tag = kTagPaths;
};

PathSample sample_path(const Model& model, const Vec& x0, double s, double dt, std::uint64_t seed,
                       std::uint64_t substream, const PathOptions& opts = {});

// Re-integrates the transport over a stored path; one full matrix per grid point.
std::vector<Eigen::MatrixXd> damped_transport(const Model& model, const PathSample& path, CurvatureSource source);

ExitRecord exit_time(const Model& model, const PathSample& path, const Vec& center, double r);

FeynmanKac feynman_kac(const PathSample& path, const ScalarField& w);
// Exponentiates −½·integral, clamping the exponent at 700.
FeynmanKac fk_weight(double integral);

enum class KatoVerdict { kato, dynkin, neither };
const char* to_string(KatoVerdict v);

struct KatoOptions {
    std::vector<double> t_grid;
    std::vector<Vec> x_samples;
    std::size_t n_paths = 10000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct KatoReport {
    std::vector<double> t;
    std::vector<double> estimate, se;          // sup over x of ∫₀ᵗ E|w(X_s)| ds
    std::vector<int> argsup;
    std::vector<double> exp_estimate, exp_se;  // sup over x of E exp(∫₀ᵗ |w|)
    double intercept = 0.0, intercept_se = 0.0;
    double c_gamma = 0.0;
    double gamma = 2.0;
    KatoVerdict verdict = KatoVerdict::neither;
    std::string note;
};

// Midpoint-in-time quadrature: paths run at Δt/2 and |w| is read at the odd grid points.
KatoReport kato_test(const Model& model, const ScalarField& w, const KatoOptions& opts);

}  // namespace hodgemc
