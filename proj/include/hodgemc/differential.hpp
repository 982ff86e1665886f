#pragma once

#include "hodgemc/exterior.hpp"
#include "hodgemc/manifold.hpp"

#include <functional>

namespace hodgemc {

// Form field in chart coordinates returning coordinate-coframe components.
using FormField = std::function<FormValue(const Vec& y)>;

// ∇_{∂_i} of a form field at chart point y, by central differences plus the Γ correction.
FormValue covariant_partial(const Chart& chart, const FormField& field, const Vec& y, int i, double h);

// d = Σ dx^i ∧ ∇_{∂_i} and δ = −Σ g^{ij} ∂_i ⌟ ∇_{∂_j}; x is a model point, the field lives in chart_at(x).
FormValue numeric_d(const Model& model, const FormField& field, const Vec& x);
FormValue numeric_delta(const Model& model, const FormField& field, const Vec& x);

// Coordinate ↔ orthonormal components for a frame E (columns are the e_a in chart components).
FormValue to_orthonormal(const Mat& E, const FormValue& alpha);
FormValue to_coordinate(const Mat& E, const FormValue& alpha);

struct ConformalRules {
    double psi = 0.0;
    double inner_scale = 1.0;   // (·,·)^{(k)}_{g_ψ} / (·,·)^{(k)}_g
    double vol_factor = 1.0;    // dvol_{g_ψ} / dvol_g
    double istar_factor = 1.0;  // I* on degree k
    FormValue delta_psi;        // δ_{g_ψ} α from δ_g α and dψ
};

// Transformation rules under g ↦ e^{2ψ}g for a degree-k field on a conformal model.
ConformalRules conformal_rules(const Model& model, const Vec& x, const FormField& alpha, int k);

}  // namespace hodgemc
