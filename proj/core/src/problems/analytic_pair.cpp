#include "mfuq/problems.hpp"

#include <cmath>

namespace mfuq {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

AnalyticPair analytic_pair() {
    AnalyticPair p;

    const InputLaw law{UniformBox{{-1.0, -1.0}, {1.0, 1.0}}};

    p.hf.label = "analytic_hf";
    p.hf.d = 2;
    p.hf.cost = 1.0;
    p.hf.law = law;
    p.hf.evaluate = [](const Vec& v) {
        return std::exp(0.7 * v[0] + 0.3 * v[1]) + 0.15 * std::sin(2.0 * kPi * v[0]);
    };
    p.hf.gradient = [](const Vec& v) {
        const double e = std::exp(0.7 * v[0] + 0.3 * v[1]);
        return Vec{0.7 * e + 0.3 * kPi * std::cos(2.0 * kPi * v[0]), 0.3 * e};
    };

    p.lf.label = "analytic_lf";
    p.lf.d = 2;
    p.lf.cost = 0.01;
    p.lf.law = law;
    p.lf.evaluate = [](const Vec& v) {
        return std::exp(0.01 * v[0] + 0.99 * v[1]) + 0.15 * std::sin(3.0 * kPi * v[1]);
    };
    p.lf.gradient = [](const Vec& v) {
        const double e = std::exp(0.01 * v[0] + 0.99 * v[1]);
        return Vec{0.01 * e, 0.99 * e + 0.45 * kPi * std::cos(3.0 * kPi * v[1])};
    };

    p.t = std::shared_ptr<const Flow>(make_analytic_cdf_flow(law));

    // Product of the two marginal expectations of the exponential; the sine
    // terms integrate to zero.
    p.exact_mean_hf = (25.0 / 21.0) * (std::exp(0.7) - std::exp(-0.7)) *
                      (std::exp(0.3) - std::exp(-0.3));

    return p;
}

}  // namespace mfuq
