#pragma once

#include "hodgemc/exterior.hpp"
#include "hodgemc/manifold.hpp"
#include "hodgemc/paths.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hodgemc {

// Form field on model points with coordinate components (ambient components on the sphere).
using ModelForm = std::function<FormValue(const Vec& p)>;

// Components of α(p) in the orthonormal frame of fp.
FormValue frame_components(const Model& model, const FramePoint& fp, const FormValue& coord);

enum class EllMode { compact_linear, localized };
const char* to_string(EllMode mode);
EllMode ell_mode_from_string(const std::string& s);

// Scalar profile φ of ℓ_r = v·φ_r on the grid, driven step by step along a path.
// Localized mode integrates A_{n+1} = A_n + ψ_loc(X_n)Δt and sets φ = max(0, 1 − A); once X_n is
// within a few standard deviations of one step from ∂B(x,1) the clock jumps to 1, so ℓ is zero
// at the first grid exit except with probability below 1e-15 per step.
class EllClock {
public:
    EllClock(const Model& model, EllMode mode, double s, const Vec& x, const TimeGrid& grid, double c_loc = 1.0);

    void reset();
    struct Rate {
        double phi = 0.0;     // φ_n
        double phidot = 0.0;  // (φ_{n+1} − φ_n)/Δt, determined by X_n
    };
    Rate step(const FramePoint& Xn);
    double phi() const { return phi_; }
    int index() const { return n_; }

private:
    const Model& model_;
    EllMode mode_;
    double s_;
    Vec x_;
    TimeGrid grid_;
    double c_loc_, layer_;
    double A_ = 0.0, phi_ = 1.0;
    int n_ = 0;
};

struct EllProcess {
    EllMode mode = EllMode::compact_linear;
    FormValue v;
    std::vector<double> phi, phidot;  // φ_n on t_0..t_N, φ̇_n on steps 0..N-1
    double vanish_time = 0.0;
    double energy = 0.0;  // ∫|ℓ̇|² dr on the grid

    FormValue at(std::size_t n) const { return cplx(phi[n]) * v; }
};

EllProcess make_ell(const Model& model, EllMode mode, const FormValue& v, double s, const Vec& x,
                    const PathSample& path, double c_loc = 1.0);

// Element of T_xM ⊗ Λ^k T*_xM in the orthonormal frame: c[a·C(m,k) + i] is component i of ξ(e_a).
struct MixedTensor {
    int m = 0, k = 0;
    Eigen::VectorXcd c;

    static MixedTensor zero(int m, int k);
    // ξ = Σ_a e_a ⊗ parts[a].
    static MixedTensor from_parts(const std::vector<FormValue>& parts, int k);
    // e_a ⊗ θ for a single direction.
    static MixedTensor single(int m, int a, const FormValue& theta, int k);
    double norm() const { return c.norm(); }
};

struct EstimatorOptions {
    std::size_t n_paths = 10000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    int workers = 1;
    int substeps = 1;
    EllMode mode = EllMode::compact_linear;
    double c_loc = 1.0;
    std::optional<KatoVerdict> kato;  // verdict on ℛ̲^- from a Kato run, if one was made
    bool allow_kato_override = false;
};

struct EstimatorResult {
    std::string kind;
    Eigen::VectorXcd value;
    Eigen::VectorXd se;  // combined real/imaginary standard error per component
    std::size_t n = 0;
    std::uint64_t seed = 0;
    double s = 0.0, dt = 0.0;
    int steps = 0;
    int degree = 0;
    std::string mode;
    double fv_max = 0.0;   // largest |finite-variation increment| seen (covariant estimator)
    double rho_max = 0.0;  // largest operator norm of ρ along the paths

    cplx scalar() const { return value[0]; }
    double scalar_se() const { return se[0]; }
};

void to_json(nlohmann::json& j, const EstimatorResult& r);

// Throws KatoError when a supplied verdict is "neither" and no override is set.
void require_kato(const Model& model, const EstimatorOptions& opts);

// E[Q_sᵀ α̂(X_s)] in the orthonormal frame at x, all degrees.
EstimatorResult semigroup_estimate(const Model& model, const ModelForm& alpha, const Vec& x, double s,
                                   const EstimatorOptions& opts);

// E[exp(−½∫ λ_min(ℛ^(k))) |α̂_k(X_s)|]: the scalar majorant of |P_s α| on degree k.
EstimatorResult domination_estimate(const Model& model, const ModelForm& alpha, int k, const Vec& x, double s,
                                    const EstimatorOptions& opts);

// ((dP_sα)_x, v) for v of pure degree k+1 (frame components at x).
EstimatorResult bismut_d(const Model& model, const ModelForm& alpha, const Vec& x, double s, const FormValue& v,
                         const EstimatorOptions& opts);

// ((δP_sα)_x, v) for v of pure degree k−1; α of degree 0 gives exactly zero when v is empty.
EstimatorResult bismut_delta(const Model& model, const ModelForm& alpha, const Vec& x, double s, const FormValue& v,
                             const EstimatorOptions& opts);

// (∇P_sα(x), ξ) for ξ ∈ T_xM ⊗ Λ^k.
EstimatorResult bismut_nabla(const Model& model, const ModelForm& alpha, const Vec& x, double s,
                             const MixedTensor& xi, const EstimatorOptions& opts);

}  // namespace hodgemc
