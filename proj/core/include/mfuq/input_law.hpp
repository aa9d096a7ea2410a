#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mfuq/linalg.hpp"

namespace mfuq {

struct InputLaw;

// Axis-aligned box with independent uniform coordinates. lo == hi on a
// coordinate makes it a point mass there.
struct UniformBox {
    Vec lo;
    Vec hi;
};

// d independent standard normal coordinates.
struct StdGaussian {
    int d = 1;
};

// Uniform law on the triangle spanned by three 2D vertices.
struct Triangle2D {
    std::array<double, 2> v1{};
    std::array<double, 2> v2{};
    std::array<double, 2> v3{};
};

// Triangular density on [a, b] with mode c.
struct Triangular1D {
    double a = 0.0;
    double c = 0.0;
    double b = 0.0;
};

// Trapezoidal density on [a, d] with flat top on [b, c].
struct Trapezoidal1D {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double d = 0.0;
};

// Independent product of component laws; coordinates are concatenated.
struct ProductLaw {
    std::vector<InputLaw> parts;
};

// Resampling with replacement from fixed rows.
struct EmpiricalLaw {
    Matrix sample;
};

struct InputLaw {
    std::variant<UniformBox, StdGaussian, Triangle2D, Triangular1D, Trapezoidal1D,
                 ProductLaw, EmpiricalLaw>
        v;
};

// Rows are immutable once created; safe to share across threads.
struct SampleBatch {
    Matrix data;  // n rows, law_dim columns
    std::uint64_t seed = 0;
    std::string law_tag;
};

int law_dim(const InputLaw& law);

// Throws std::invalid_argument when a structural invariant fails.
void validate_law(const InputLaw& law);

std::string law_tag(const InputLaw& law);

// Deterministic given (law, n, seed): one xoshiro stream drives the whole
// batch, rows filled in order.
SampleBatch sample(const InputLaw& law, int n, std::uint64_t seed);

// 1D laws only (Triangular1D, Trapezoidal1D, UniformBox with one coordinate).
// Multivariate laws throw std::invalid_argument.
double cdf_1d(const InputLaw& law, double z);
double quantile_1d(const InputLaw& law, double u);
double pdf_1d(const InputLaw& law, double z);

nlohmann::json law_to_json(const InputLaw& law);
InputLaw law_from_json(const nlohmann::json& j);

}  // namespace mfuq
