#pragma once

#include "hodgemc/exterior.hpp"
#include "hodgemc/manifold.hpp"

#include <functional>

namespace hodgemc {

// Two metrics compared at one point of a shared chart. Λ-level matrices act on coordinate
// coframe components, basis ordered as in ExteriorAlgebra.
struct MetricPair {
    int m = 0;
    Vec x, y;
    Mat G, H;
    Mat A;  // h(u,v) = g(Au,v), A = G^{-1}H
    Eigen::VectorXd eig_A;
    Eigen::MatrixXd gram_g, gram_h;  // full Λ Gram matrices
    Eigen::MatrixXd calA, calA_half, calA_mhalf;
    double rho = 1.0;
    double delta = 0.0;
    double delta_nabla = 0.0;
    Christoffel dnabla;  // Γ^h − Γ^g
    double S = 0.0;
    Eigen::MatrixXd S_hat;

    // 𝒜^p for any real p (g-self-adjoint functional calculus).
    Eigen::MatrixXd calA_power(double p) const;
    // Operator norm of a Λ endomorphism measured with g.
    double g_norm(const Eigen::MatrixXd& B) const;
};

MetricPair metric_pair(const Model& g_model, const Model& h_model, const Vec& x);
// Pointwise pair from two SPD matrices; connection data are left at zero.
MetricPair metric_pair_at(const Mat& G, const Mat& H);

// (∇^h_X − ∇^g_X) acting on Λ in coordinate coframe components.
Eigen::MatrixXd connection_difference_on_forms(const MetricPair& pair, const Vec& X);

// sup over unit X of the g-operator norm of Δ∇(X), squared; HOPM sweep over the trilinear form.
double connection_deviation(const Christoffel& dnabla, const Mat& G, int iterations = 50, double tol = 1e-10);

struct SinhBound {
    double sigma_max_Shat = 0.0;
    double abs_S = 0.0;
    double bound = 0.0;
    bool holds = true;
};
SinhBound sinh_bound_check(const MetricPair& pair);

// Covariant derivative ∇_X(𝒜^p) at x by central differences of 𝒜^p corrected with Γ^g.
Eigen::MatrixXd covariant_derivative_calA(const Model& g_model, const Model& h_model, const Vec& x, const Vec& X,
                                          double p = 1.0, double h = 1e-5);

struct JacobiResult {
    double d_detA = 0.0;
    double dlog_rho = 0.0;
    double bound_rhs = 0.0;
    bool holds = true;
};
JacobiResult jacobi_dlogrho(const Model& g_model, const Model& h_model, const Vec& x, const Vec& X);

enum class Identification { I, I_star };
FormValue identification_apply(const MetricPair& pair, const FormValue& alpha, Identification which);

}  // namespace hodgemc
