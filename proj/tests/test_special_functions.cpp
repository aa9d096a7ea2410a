#include "test_helpers.hpp"

#include <cmath>
#include <stdexcept>

#include "mfuq/special_functions.hpp"

using mfuq::erf_inv;
using mfuq::normal_cdf;
using mfuq::normal_quantile;

namespace {

// Taylor series for erf, independent of both the library implementation and
// std::erf. Converges to ~1e-13 on |x| <= 3.5 (alternating terms peak near
// 2e2 there, costing ~2 digits).
double erf_series(double x) {
    const double two_over_sqrt_pi = 1.1283791670955125739;
    double term = x;
    double sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        const double add = term / (2 * n + 1);
        sum += add;
        if (std::fabs(add) < 1e-18 * std::fabs(sum)) break;
    }
    return two_over_sqrt_pi * sum;
}

// Bisection inverse of erf_series on [-6, 6].
double erf_inv_bisect(double p) {
    double lo = -6.0, hi = 6.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (erf_series(mid) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("series oracle agrees with std::erf") {
    for (double x = -3.5; x <= 3.5; x += 0.05) {
        CHECK(erf_series(x) == doctest::Approx(std::erf(x)).epsilon(1e-12));
    }
}

TEST_CASE("erf_inv trivial values and odd symmetry") {
    CHECK(erf_inv(0.0) == 0.0);
    for (double p = 0.05; p < 1.0; p += 0.05) {
        CHECK(erf_inv(-p) == -erf_inv(p));
    }
}

TEST_CASE("erf_inv round-trips the series oracle") {
    // erf(erf_inv(p)) = p to 1e-9 across the open interval.
    for (double p = -0.999; p <= 0.999; p += 0.007) {
        CHECK_CLOSE(erf_series(erf_inv(p)), p, 1e-9);
    }
    // Extreme tails still round-trip in x-space.
    for (double x = -3.0; x <= 3.0; x += 0.125) {
        CHECK_CLOSE(erf_inv(erf_series(x)), x, 1e-8);
    }
}

TEST_CASE("erf_inv at p = erf(1) recovers 1") {
    CHECK_CLOSE(erf_inv(erf_series(1.0)), 1.0, 1e-9);
}

TEST_CASE("erf_inv(0.5) matches a bisection oracle") {
    const double x_oracle = erf_inv_bisect(0.5);
    CHECK_CLOSE(erf_series(x_oracle), 0.5, 1e-12);
    CHECK_CLOSE(erf_inv(0.5), x_oracle, 1e-9);
}

TEST_CASE("erf_inv rejects |p| >= 1") {
    CHECK_THROWS_AS(erf_inv(1.0), std::domain_error);
    CHECK_THROWS_AS(erf_inv(-1.0), std::domain_error);
    CHECK_THROWS_AS(erf_inv(1.5), std::domain_error);
    CHECK_THROWS_AS(erf_inv(-2.0), std::domain_error);
}

TEST_CASE("normal cdf and quantile invert each other") {
    CHECK_CLOSE(normal_cdf(0.0), 0.5, 1e-15);
    CHECK_CLOSE(normal_quantile(0.5), 0.0, 1e-15);
    for (double u = 0.001; u < 1.0; u += 0.013) {
        CHECK_CLOSE(normal_cdf(normal_quantile(u)), u, 1e-10);
    }
    for (double x = -4.0; x <= 4.0; x += 0.25) {
        CHECK_CLOSE(normal_quantile(normal_cdf(x)), x, 1e-8);
    }
}
