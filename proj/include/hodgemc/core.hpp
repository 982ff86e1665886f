#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace hodgemc {

using cplx = std::complex<double>;

// Manifold dimension is at most 4; the embedded sphere needs one extra ambient slot.
inline constexpr int kMaxDim = 4;
inline constexpr int kMaxAmbient = kMaxDim + 1;
inline constexpr int kMaxForms = 1 << kMaxDim;

// Stack-backed dynamic-size types so the per-step path code never touches the heap.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAmbient, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAmbient, kMaxAmbient>;
using LVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxForms, 1>;
using LMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxForms, kMaxForms>;
using LVecC = Eigen::Matrix<cplx, Eigen::Dynamic, 1, 0, kMaxForms, 1>;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StepError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KatoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Christoffel symbols Γ^k_{ij} stored as g[(k*m + i)*m + j].
struct Christoffel {
    int m = 0;
    std::array<double, kMaxDim * kMaxDim * kMaxDim> g{};
    double& operator()(int k, int i, int j) { return g[(k * m + i) * m + j]; }
    double operator()(int k, int i, int j) const { return g[(k * m + i) * m + j]; }
};

// Fully covariant four-tensor T_{abcd} stored as v[((a*m + b)*m + c)*m + d].
struct Tensor4 {
    int m = 0;
    std::array<double, kMaxDim * kMaxDim * kMaxDim * kMaxDim> v{};
    double& operator()(int a, int b, int c, int d) { return v[((a * m + b) * m + c) * m + d]; }
    double operator()(int a, int b, int c, int d) const { return v[((a * m + b) * m + c) * m + d]; }
    double frobenius() const
    {
        double s = 0.0;
        const int n = m * m * m * m;
        for (int i = 0; i < n; ++i) s += v[i] * v[i];
        return std::sqrt(s);
    }
};

inline int binomial(int n, int k)
{
    if (k < 0 || k > n) return 0;
    int r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Symmetric positive definite square root and inverse square root via eigendecomposition.
template <class M>
M spd_power(const M& a, double p)
{
    Eigen::SelfAdjointEigenSolver<M> es(a);
    const auto& ev = es.eigenvalues();
    M d = M::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (!(ev[i] > 0.0)) throw ModelError("matrix is not positive definite");
        d(i, i) = std::pow(ev[i], p);
    }
    return es.eigenvectors() * d * es.eigenvectors().transpose();
}

}  // namespace hodgemc
