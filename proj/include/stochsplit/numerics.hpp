#pragma once

#include <complex>
#include <span>

#include <Eigen/Dense>

namespace stochsplit {

using cplx = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

inline constexpr Eigen::Index kMaxMatExpDim = 64;

/// Matrix exponential by scaling and squaring with the degree-13 diagonal
/// Pade approximant (Higham 2005 coefficients, theta_13 = 5.37). Diagonal
/// input takes an exact elementwise path. Throws std::invalid_argument for
/// non-square, oversized (d > 64) or non-finite input.
ComplexMatrix mat_exp(const ComplexMatrix& m);

/// Trapezoid rule on uniformly spaced samples; exact for affine integrands.
/// Throws std::invalid_argument for fewer than two points.
double quad_trapezoid(std::span<const double> samples, double spacing);

/// Max-abs-entry check used for commutation tests.
double max_abs(const ComplexMatrix& m) noexcept;

/// m1 m2 - m2 m1.
ComplexMatrix commutator(const ComplexMatrix& m1, const ComplexMatrix& m2);

bool all_finite(const ComplexMatrix& m) noexcept;

}  // namespace stochsplit
