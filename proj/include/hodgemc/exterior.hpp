#pragma once

#include "hodgemc/core.hpp"

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace hodgemc {

enum class FrameTag { coordinate, orthonormal };

const char* to_string(FrameTag tag);

// Basis bookkeeping for Λ(ℝ^m): subsets of {0..m-1} as bitmasks, ordered by degree
// and lexicographically inside each degree.
class ExteriorAlgebra {
public:
    static const ExteriorAlgebra& of(int m);

    int dim() const { return m_; }
    int size() const { return 1 << m_; }
    int degree_offset(int k) const { return offset_[k]; }
    int degree_size(int k) const { return binomial(m_, k); }
    unsigned mask(int idx) const { return mask_[idx]; }
    int index(unsigned mask) const { return index_[mask]; }
    int degree(int idx) const { return degree_[idx]; }

    // ε^c ∧ · and e_d ⌟ · on basis elements: target index (or -1) and sign.
    int wedge_target(int c, int idx, int& sign) const;
    int interior_target(int d, int idx, int& sign) const;

    // Dense matrices of ε^c ∧ · and e_d ⌟ ·.
    const Eigen::MatrixXd& wedge_matrix(int c) const { return wedge_[c]; }
    const Eigen::MatrixXd& interior_matrix(int d) const { return interior_[d]; }

    // Terms of Σ_{lkcd} R_{lkcd} (ε^c∧)(e_d⌟)(ε^l∧)(e_k⌟): one entry per nonzero (row, col, lkcd).
    struct Term {
        int row, col, flat, sign;
    };
    const std::vector<Term>& weitzenbock_terms() const { return weitz_; }
    // Terms of (ε^c∧)(e_d⌟): entry flat = c*m + d.
    const std::vector<Term>& derivation_terms() const { return deriv_; }

private:
    explicit ExteriorAlgebra(int m);
    int m_;
    std::vector<unsigned> mask_;
    std::vector<int> index_;
    std::vector<int> degree_;
    std::vector<int> offset_;
    std::vector<Eigen::MatrixXd> wedge_, interior_;
    std::vector<Term> weitz_, deriv_;
};

// Element of ΛT*_x M: full 2^m coefficient vector with the populated degrees recorded.
struct FormValue {
    int m = 0;
    std::uint32_t degree_mask = 0;
    Eigen::VectorXcd coeffs;
    FrameTag frame = FrameTag::orthonormal;

    static FormValue zero(int m, FrameTag frame = FrameTag::orthonormal);
    static FormValue scalar(int m, cplx value, FrameTag frame = FrameTag::orthonormal);
    // Basis covector ε^i (0-based).
    static FormValue covector(int m, int i, FrameTag frame = FrameTag::orthonormal);
    // ε^{i_1} ∧ ... ∧ ε^{i_k} for strictly increasing indices.
    static FormValue basis(int m, std::initializer_list<int> indices, FrameTag frame = FrameTag::orthonormal);
    static FormValue from_coeffs(int m, const Eigen::VectorXcd& c, FrameTag frame = FrameTag::orthonormal);

    Eigen::VectorXcd block(int k) const;
    void set_block(int k, const Eigen::VectorXcd& values);
    cplx operator[](int idx) const { return coeffs[idx]; }
    bool is_pure(int k) const { return degree_mask == (1u << k); }
    void refresh_mask(double tol = 0.0);

    FormValue& operator+=(const FormValue& o);
    FormValue& operator*=(cplx a);
};

FormValue operator+(FormValue a, const FormValue& b);
FormValue operator-(const FormValue& a, const FormValue& b);
FormValue operator*(cplx a, FormValue b);

FormValue wedge(const FormValue& a, const FormValue& b);
// Contraction of a vector X (components in the form's frame) into α.
FormValue interior(const Eigen::VectorXd& X, const FormValue& a);
// Contraction of θ^♯ into α where the sharp uses the metric gx.
FormValue interior(const Eigen::MatrixXd& gx, const Eigen::VectorXd& theta, const FormValue& a);

// Gram matrix det[(dx^{i_a}, dx^{j_b})_g] on Λ^k.
Eigen::MatrixXd lambda_gram(const Eigen::MatrixXd& gx, int k);

// Functorial extension Λ(L) of a linear map acting on covector components (rectangular allowed):
// entry (I, J) = det L[I, J].
Eigen::MatrixXd lambda_extend(const Eigen::MatrixXd& L);

// Derivation extension Σ N_{cd} (ε^c∧)(e_d⌟) of a covector endomorphism N.
Eigen::MatrixXd derivation_extend(const Eigen::MatrixXd& N);

// Bilinear pairing Σ a_I b_I (no conjugation) and Hermitian inner product Σ conj(a_I) b_I.
cplx pairing(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b);
cplx inner(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b);

}  // namespace hodgemc
