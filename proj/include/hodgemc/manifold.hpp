#pragma once

#include "hodgemc/core.hpp"
#include "hodgemc/exterior.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace hodgemc {

enum class ModelKind { euclidean, flat_torus, sphere, hyperbolic, conformal };
enum class DerivMode { analytic, finite_difference };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

using MetricDerivs = std::array<Mat, kMaxDim>;

// Coordinate chart carrying a metric; Christoffels and curvature follow from the metric.
class Chart {
public:
    virtual ~Chart() = default;
    virtual int dim() const = 0;
    virtual Mat metric(const Vec& y) const = 0;
    virtual void metric_derivatives_analytic(const Vec& y, MetricDerivs& dG) const = 0;
    virtual bool in_domain(const Vec& y) const { (void)y; return true; }

    void metric_derivatives(const Vec& y, MetricDerivs& dG) const;
    virtual Christoffel christoffel(const Vec& y) const;
    // R_{ijkl} = g(R(∂_i,∂_j)∂_k, ∂_l) with R(X,Y) = [∇_X,∇_Y] − ∇_[X,Y]; ∂Γ by central differences.
    Tensor4 riemann(const Vec& y) const;
    // Covariant derivative ∇_{∂_q} R for q = 0..m-1.
    std::vector<Tensor4> nabla_riemann(const Vec& y) const;

    DerivMode mode = DerivMode::analytic;
    double h_fd = 1e-4;
};

// Conformal factor families; displacement d is measured from the center (wrapped on tori).
struct ConformalFactor {
    enum class Family { gaussian, constant, spline };
    Family family = Family::constant;
    double amplitude = 0.0;
    double width = 1.0;
    Eigen::VectorXd center;

    double value(const Vec& d) const;
    Vec gradient(const Vec& d) const;
    double sup_abs() const { return std::abs(amplitude); }
};

struct ModelSpec {
    ModelKind kind = ModelKind::euclidean;
    int m = 2;
    double radius = 1.0;
    std::vector<double> periods;
    DerivMode mode = DerivMode::analytic;
    double h_fd = 1e-4;
    std::shared_ptr<ModelSpec> base;  // conformal only
    ConformalFactor psi;              // conformal only
};

struct FramePoint {
    Vec x;  // chart coordinates, or ambient coordinates for the embedded sphere
    Mat E;  // columns: orthonormal frame (chart components, or ambient vectors for the sphere)
};

class Model {
public:
    virtual ~Model() = default;

    virtual ModelKind kind() const = 0;
    int dim() const { return m_; }
    virtual int ambient_dim() const { return m_; }
    virtual bool compact() const = 0;
    bool complete() const { return true; }
    virtual bool flat() const { return false; }
    // Sectional curvature when constant, used for closed-form shortcuts.
    virtual std::optional<double> constant_curvature() const { return std::nullopt; }

    // Chart containing p, with p's coordinates written to y.
    virtual const Chart& chart_at(const Vec& p, Vec& y) const = 0;
    // The global chart for intrinsic models; throws for the embedded sphere.
    virtual const Chart& chart() const;

    virtual Mat frame_at(const Vec& p) const = 0;
    FramePoint frame_point(const Vec& p) const { return {p, frame_at(p)}; }
    virtual FramePoint step(const FramePoint& fp, const Vec& v, double h) const = 0;
    virtual Vec exp_map(const FramePoint& fp, const Vec& v) const = 0;
    virtual bool has_distance() const { return true; }
    virtual double distance(const Vec& p, const Vec& q) const = 0;
    virtual bool valid_point(const Vec& p) const = 0;

    // Orthonormal-frame curvature R̂_{abcd} = g(R(e_a,e_b)e_c, e_d) and its covariant derivative.
    virtual Tensor4 riemann_in_frame(const FramePoint& fp) const;
    virtual std::vector<Tensor4> nabla_riemann_in_frame(const FramePoint& fp) const;
    double nabla_riemann_norm(const FramePoint& fp) const;

    // Weitzenböck endomorphism at fp in its frame (cached for constant curvature).
    LMat weitzenbock_at(const FramePoint& fp) const;

    // Underlying model of a conformal perturbation, null otherwise.
    virtual const Model* base_model() const { return nullptr; }
    // ψ and dψ (chart components) at x for conformal models; zero otherwise.
    virtual double conformal_psi(const Vec& x) const { (void)x; return 0.0; }
    virtual Vec conformal_dpsi(const Vec& x) const { return Vec::Zero(x.size()); }

    const ModelSpec& spec() const { return spec_; }
    std::string describe() const;

protected:
    explicit Model(ModelSpec spec);
    int m_;
    ModelSpec spec_;
    mutable std::once_flag weitz_once_;
    mutable LMat const_weitz_;
};

using ModelPtr = std::shared_ptr<const Model>;

ModelPtr make_model(const ModelSpec& spec);

// Wraps a model and flips the sign of Γ^k_{ij} for i < j (a torsionful connection); used to check fault detection.
ModelPtr make_tampered_model(ModelPtr inner);

// Conformal perturbation e^{2ψ}g of an intrinsic model (the factor must be bounded).
ModelPtr make_conformal(ModelPtr base, const ConformalFactor& psi);

// Displacement q − p reduced to the fundamental domain on tori, plain difference otherwise.
Vec chart_displacement(const Model& model, const Vec& p, const Vec& q);

// Curvature endomorphisms assembled from orthonormal-frame components.
LMat weitzenbock(const Tensor4& rhat);
Eigen::MatrixXd ricci_in_frame(const Tensor4& rhat);
// R(e_a,e_b) acting on Λ as a derivation.
LMat curvature_on_forms(const Tensor4& rhat, int a, int b);
// ℛ̃ = Ric^tr⊗1 − 2R^E· + 1⊗ℛ on T*M⊗Λ, ordered as blocks η(e_0), ..., η(e_{m-1}).
Eigen::MatrixXd weitzenbock_tilde(const Tensor4& rhat);
// ρ = ∇·R^E + ∇ℛ as a map Λ → T*M⊗Λ.
Eigen::MatrixXd rho_hom(const std::vector<Tensor4>& nabla_rhat);
// Curvature operator on Λ² with (Q(X∧Y), U∧V) normalised so that the round sphere gives +1.
Eigen::MatrixXd curvature_operator(const Tensor4& rhat);

struct CurvaturePackage {
    int m = 0;
    Vec y;
    Mat G;
    Mat E;
    Christoffel gamma;
    Tensor4 riemann;        // coordinate components
    Mat ricci;              // coordinate components
    Tensor4 riemann_frame;  // orthonormal components
    LMat weitzenbock;       // orthonormal frame, block diagonal
    double nabla_R = 0.0;
    Eigen::MatrixXd curvature_op;
};

CurvaturePackage curvature_package(const Model& model, const Vec& x);

struct SymmetryReport {
    double antisym_first = 0.0, antisym_last = 0.0, pair = 0.0, bianchi = 0.0;
    double max() const;
};
SymmetryReport riemann_symmetries(const Tensor4& r);

FramePoint geodesic_step(const Model& model, const FramePoint& fp, const Vec& v, double h);

// Orthonormalise the columns of E with respect to G: E (E^T G E)^{-1/2}.
Mat orthonormalize(const Mat& E, const Mat& G);

}  // namespace hodgemc
