#pragma once

namespace mfuq {

// Inverse of the error function on (-1, 1).
// Rational minimax initial guess refined with two Newton steps; accurate to
// a few ulps, in particular |erf(erf_inv(p)) - p| < 1e-9 over the domain.
// Throws std::domain_error for |p| >= 1.
double erf_inv(double p);

// Standard normal CDF.
double normal_cdf(double x);

// Standard normal quantile function, Phi^{-1}(u) = sqrt(2) erf_inv(2u - 1).
double normal_quantile(double u);

}  // namespace mfuq
