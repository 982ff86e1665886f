#pragma once

#include "hodgemc/bismut.hpp"
#include "hodgemc/manifold.hpp"
#include "hodgemc/paths.hpp"

#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace hodgemc {

inline constexpr int kBallPoints = 256;

// γ, c_γ, c_q (q = 2) and the ball radius R. D is assembled so that e^{Ds} = γ·c_q^{1/q}·e^{s·c_γ}.
struct Constants {
    double gamma = 2.0;
    double c_gamma = 0.0;
    double q = 2.0;
    double c_q = 4.0;
    double R = 1.0;
    bool resolved = false;
    std::string source;
    std::optional<KatoVerdict> verdict;

    double D(double s) const;
    // C(m, q, R, K) = (π/2R)·√((m−1)K) + (π²/4R²)·(m+q+3).
    double C(int m, double Kminus) const;
    void require() const;

    static Constants declared(double c_gamma);
};

void to_json(nlohmann::json& j, const Constants& c);

// ℛ̲^-(p) = max(0, −λ_min ℛ(p)).
double weitzenbock_negative_part(const Model& model, const Vec& p);

// c_γ from the Kato test on ℛ̲^- (closed form when the curvature is constant).
Constants resolve_constants(const Model& model, const KatoOptions& kato);

// x followed by the first n−1 Halton points of the unit tangent ball pushed through exp_x.
std::vector<Vec> ball_sample(const Model& model, const Vec& x, int n = kBallPoints);

struct LocalCurvature {
    int m = 0;
    double Kbar = 0.0, Kunder = 0.0;
    std::vector<double> Kbar_k, Kunder_k;
    double nabla_R = 0.0;           // max over the sample of |∇R|
    double gallot_meyer_slack = 0.0;  // min over sample and k of λ_min(ℛ^(k)) + K_y·k(m−k)
    int points = 0;
};

// Eigen-sweep of ℛ over ball_sample; homogeneous models are evaluated at x only.
LocalCurvature local_K(const Model& model, const Vec& x, int n_ball = kBallPoints);

double psi(const LocalCurvature& lk, double s, const Constants& c);
// k-form version with (K̄^(k) + K̲^(k+sign))^- and the square-root term from the same two blocks.
double psi_k(const LocalCurvature& lk, int k, int sign, double s, const Constants& c);
// Minimum over the admissible signs.
double psi_k(const LocalCurvature& lk, int k, double s, const Constants& c);
double xi(const LocalCurvature& lk, double s, const Constants& c);
double theta(const LocalCurvature& lk);

double psi(const Model& model, const Vec& x, double s, const Constants& c);
double xi(const Model& model, const Vec& x, double s, const Constants& c);
double theta(const Model& model, const Vec& x);

struct PhiValue {
    double value = 0.0;
    double tail = 0.0;  // truncated series remainder (already included in value)
    bool upper_envelope = false;
    std::string method;
};

PhiValue phi(const Model& model, const Vec& x, double s);

// Tensor-product midpoint quadrature settings for chart boxes.
struct QuadSpec {
    double cell = 0.25;           // level-0 cell width in chart units (log y on the hyperbolic axis)
    double half_width = 4.0;      // initial box half-width for non-compact charts
    double max_half_width = 32.0;
    double tail_tol = 1e-10;
    int n_ball = kBallPoints;
    double quasi_isometry = 0.0;  // declared C with C⁻¹g ≤ h ≤ Cg; must be set
    double delta_nabla_bound = 0.0;  // declared bound on δ^∇; 0 means finiteness only
    Vec center;                   // box center; defaults to the origin / the bump center
    int workers = 1;
};

struct CriterionNode {
    int level = 0;
    Vec y;
    double weight_g = 0.0, weight_h = 0.0;  // cell volume times the ν-volume density
    double delta = 0.0, delta_nabla = 0.0;
    LocalCurvature K_g, K_h;
    double psi_g = 0.0, psi_h = 0.0, xi_g = 0.0, theta_g = 0.0, theta_h = 0.0;
    double phi_g = 0.0, phi_h = 0.0;
    double integrand_g = 0.0, integrand_h = 0.0;
};

struct CriterionBranch {
    std::vector<double> integral;    // per refinement level
    double relative_change = 0.0;
    bool converged = false;          // tail envelope dropped below tolerance
    bool stable = false;             // refinement change ≤ 5%
    std::string verdict;             // finite | divergent-at-resolution
    double box_half_width = 0.0;
    std::vector<std::pair<double, double>> tail_history;  // (half-width, boundary envelope)
};

struct BoundReport {
    double s = 0.0;
    int m = 0;
    std::string g_model, h_model;
    Constants constants_g, constants_h;
    double C_g = 0.0, C_h = 0.0;  // C(m, q, R, K̲^-) at the box center
    double quasi_isometry = 0.0;
    double delta_nabla_max = 0.0;
    PhiValue phi_g, phi_h;
    CriterionBranch branch_g, branch_h;
    std::string verdict;
    bool refinement_flag = false;
    std::vector<CriterionNode> nodes;
};

// Grid quadrature of max{δ, δ^∇ + Ξ_g, Ψ_ν}·Φ_ν against vol_ν for ν ∈ {g, h}; h must live on g's chart.
BoundReport criterion_integral(const Model& g, const Model& h, double s, const QuadSpec& q,
                               const Constants& cg, const Constants& ch);

void to_json(nlohmann::json& j, const BoundReport& r);
void write_csv(std::ostream& os, const BoundReport& r);

// ‖α‖_{L²} by midpoint quadrature (box expansion on non-compact charts, angular grid on the sphere).
double form_l2_norm(const Model& model, const ModelForm& alpha, const QuadSpec& q);

struct BoundCheckItem {
    std::string kind;  // d | delta | nabla
    double lhs = 0.0, lhs_se = 0.0, rhs = 0.0;
    bool pass = true;
    double margin() const { return rhs - lhs; }
};

struct GradientCheck {
    double s = 0.0;
    double alpha_l2 = 0.0;
    double psi = 0.0, xi = 0.0, phi = 0.0;
    std::vector<BoundCheckItem> items;
    bool pass() const;
};

void to_json(nlohmann::json& j, const GradientCheck& g);

// Squares of bismut_d / bismut_delta / bismut_nabla over orthonormal test frames against Ψ·Φ·‖α‖² and
// Ξ·Φ·‖α‖²; α has pure degree k. Passes when lhs − 3·SE ≤ rhs.
GradientCheck gradient_bound_check(const Model& model, const ModelForm& alpha, int k, const Vec& x, double s,
                                   double alpha_l2, const Constants& c, const EstimatorOptions& opts);

// Transformed derivatives 𝒜^{-1/2}d(𝒜^{1/2}P_sα) and 𝒜^{-1/2}δ_g(𝒜^{1/2}P_sα) assembled from the
// covariant-derivative and semigroup estimators, next to the same quantities by finite differences of a
// supplied closed-form P_sα (coordinate components on g's chart).
struct TransformedCheck {
    FormValue d_assembled, d_direct, delta_assembled, delta_direct;
    double d_se = 0.0, delta_se = 0.0;    // combined standard error of the assembled sides
    double d_lhs = 0.0, delta_lhs = 0.0;  // squared norms of 𝒜^{-1/2}(·)
    double rhs = 0.0;                     // K_T·(δ^∇ + Ξ)·Φ·‖α‖²
    double ledger_constant = 0.0;         // K_T
    bool pass = true;
};

TransformedCheck transformed_check(const Model& g, const Model& h, const ModelForm& alpha, int k, const Vec& x,
                                   double s, const std::function<FormValue(const Vec&)>& semigroup_exact,
                                   double alpha_l2, const Constants& c, const EstimatorOptions& opts);

}  // namespace hodgemc
