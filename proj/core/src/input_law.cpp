#include "mfuq/input_law.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfuq/rng.hpp"
#include "mfuq/special_functions.hpp"

namespace mfuq {

namespace {

template <class... Ts>
struct Overload : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overload(Ts...) -> Overload<Ts...>;

[[noreturn]] void bad_law(const std::string& what) { throw std::invalid_argument("InputLaw: " + what); }

void fill_row(const InputLaw& law, Xoshiro256& rng, double* out);

void fill_row_impl(const UniformBox& u, Xoshiro256& rng, double* out) {
    for (std::size_t i = 0; i < u.lo.size(); ++i)
        out[i] = u.lo[i] + rng.uniform01() * (u.hi[i] - u.lo[i]);
}

void fill_row_impl(const StdGaussian& g, Xoshiro256& rng, double* out) {
    for (int i = 0; i < g.d; ++i) out[i] = normal_quantile(rng.uniform_open());
}

void fill_row_impl(const Triangle2D& t, Xoshiro256& rng, double* out) {
    double u1 = rng.uniform01();
    double u2 = rng.uniform01();
    if (u1 + u2 > 1.0) {  // reflect into the lower simplex half
        u1 = 1.0 - u1;
        u2 = 1.0 - u2;
    }
    for (int k = 0; k < 2; ++k)
        out[k] = t.v1[k] + u1 * (t.v2[k] - t.v1[k]) + u2 * (t.v3[k] - t.v1[k]);
}

void fill_row_impl(const ProductLaw& p, Xoshiro256& rng, double* out) {
    int offset = 0;
    for (const InputLaw& part : p.parts) {
        fill_row(part, rng, out + offset);
        offset += law_dim(part);
    }
}

void fill_row_impl(const EmpiricalLaw& e, Xoshiro256& rng, double* out) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(e.sample.rows)));
    const double* r = e.sample.row(i);
    for (int j = 0; j < e.sample.cols; ++j) out[j] = r[j];
}

void fill_row(const InputLaw& law, Xoshiro256& rng, double* out) {
    std::visit(Overload{
                   [&](const UniformBox& u) { fill_row_impl(u, rng, out); },
                   [&](const StdGaussian& g) { fill_row_impl(g, rng, out); },
                   [&](const Triangle2D& t) { fill_row_impl(t, rng, out); },
                   [&](const Triangular1D& t) { out[0] = quantile_1d(InputLaw{t}, rng.uniform01()); },
                   [&](const Trapezoidal1D& t) { out[0] = quantile_1d(InputLaw{t}, rng.uniform01()); },
                   [&](const ProductLaw& p) { fill_row_impl(p, rng, out); },
                   [&](const EmpiricalLaw& e) { fill_row_impl(e, rng, out); },
               },
               law.v);
}

double triangular_cdf(const Triangular1D& t, double z) {
    if (z <= t.a) return 0.0;
    if (z >= t.b) return 1.0;
    const double span = t.b - t.a;
    if (z < t.c) return (z - t.a) * (z - t.a) / (span * (t.c - t.a));
    if (z == t.c) return (t.c - t.a) / span;
    return 1.0 - (t.b - z) * (t.b - z) / (span * (t.b - t.c));
}

double triangular_quantile(const Triangular1D& t, double u) {
    const double span = t.b - t.a;
    if (span == 0.0) return t.a;
    const double split = (t.c - t.a) / span;
    if (u < split) return t.a + std::sqrt(u * span * (t.c - t.a));
    return t.b - std::sqrt((1.0 - u) * span * (t.b - t.c));
}

double trapezoid_height(const Trapezoidal1D& t) { return 2.0 / (t.d + t.c - t.a - t.b); }

double trapezoidal_cdf(const Trapezoidal1D& t, double z) {
    if (z <= t.a) return 0.0;
    if (z >= t.d) return 1.0;
    const double h = trapezoid_height(t);
    if (z < t.b) return 0.5 * h * (z - t.a) * (z - t.a) / (t.b - t.a);
    if (z <= t.c) return 0.5 * h * (t.b - t.a) + h * (z - t.b);
    return 1.0 - 0.5 * h * (t.d - z) * (t.d - z) / (t.d - t.c);
}

double trapezoidal_quantile(const Trapezoidal1D& t, double u) {
    const double h = trapezoid_height(t);
    const double f_b = 0.5 * h * (t.b - t.a);
    const double f_c = f_b + h * (t.c - t.b);
    if (u < f_b) return t.a + std::sqrt(2.0 * u * (t.b - t.a) / h);
    if (u <= f_c) return t.b + (u - f_b) / h;
    return t.d - std::sqrt(2.0 * (1.0 - u) * (t.d - t.c) / h);
}

const InputLaw& require_1d(const InputLaw& law, const char* op) {
    const bool ok = std::visit(Overload{
                                   [](const Triangular1D&) { return true; },
                                   [](const Trapezoidal1D&) { return true; },
                                   [](const UniformBox& u) { return u.lo.size() == 1; },
                                   [](const auto&) { return false; },
                               },
                               law.v);
    if (!ok) bad_law(std::string(op) + " supports only 1D laws (triangular, trapezoidal, uniform interval)");
    return law;
}

nlohmann::json vec_to_json(const Vec& v) { return nlohmann::json(v); }

Vec vec_from_json(const nlohmann::json& j) { return j.get<Vec>(); }

std::array<double, 2> point2_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) bad_law("2D vertex must be an array of two numbers");
    return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

int law_dim(const InputLaw& law) {
    return std::visit(Overload{
                          [](const UniformBox& u) { return static_cast<int>(u.lo.size()); },
                          [](const StdGaussian& g) { return g.d; },
                          [](const Triangle2D&) { return 2; },
                          [](const Triangular1D&) { return 1; },
                          [](const Trapezoidal1D&) { return 1; },
                          [](const ProductLaw& p) {
                              int d = 0;
                              for (const InputLaw& part : p.parts) d += law_dim(part);
                              return d;
                          },
                          [](const EmpiricalLaw& e) { return e.sample.cols; },
                      },
                      law.v);
}

void validate_law(const InputLaw& law) {
    std::visit(Overload{
                   [](const UniformBox& u) {
                       if (u.lo.empty() || u.lo.size() != u.hi.size())
                           bad_law("uniform box needs matching nonempty lo/hi");
                       for (std::size_t i = 0; i < u.lo.size(); ++i)
                           if (!(u.lo[i] <= u.hi[i])) bad_law("uniform box needs lo <= hi");
                   },
                   [](const StdGaussian& g) {
                       if (g.d < 1) bad_law("gaussian dimension must be >= 1");
                   },
                   [](const Triangle2D& t) {
                       const double cross = (t.v2[0] - t.v1[0]) * (t.v3[1] - t.v1[1]) -
                                            (t.v2[1] - t.v1[1]) * (t.v3[0] - t.v1[0]);
                       if (cross == 0.0) bad_law("triangle vertices are collinear");
                   },
                   [](const Triangular1D& t) {
                       if (!(t.a <= t.c && t.c <= t.b)) bad_law("triangular needs a <= c <= b");
                       if (!(t.a < t.b)) bad_law("triangular needs a < b");
                   },
                   [](const Trapezoidal1D& t) {
                       if (!(t.a <= t.b && t.b <= t.c && t.c <= t.d))
                           bad_law("trapezoidal needs a <= b <= c <= d");
                       if (!(t.a < t.d)) bad_law("trapezoidal needs a < d");
                   },
                   [](const ProductLaw& p) {
                       if (p.parts.empty()) bad_law("product law needs at least one part");
                       for (const InputLaw& part : p.parts) validate_law(part);
                   },
                   [](const EmpiricalLaw& e) {
                       if (e.sample.rows < 1 || e.sample.cols < 1)
                           bad_law("empirical law needs a nonempty sample matrix");
                   },
               },
               law.v);
}

std::string law_tag(const InputLaw& law) {
    return std::visit(Overload{
                          [](const UniformBox& u) {
                              std::ostringstream os;
                              os << "uniform_box[" << u.lo.size() << "]";
                              return os.str();
                          },
                          [](const StdGaussian& g) {
                              std::ostringstream os;
                              os << "std_gaussian[" << g.d << "]";
                              return os.str();
                          },
                          [](const Triangle2D&) { return std::string("triangle_2d"); },
                          [](const Triangular1D&) { return std::string("triangular"); },
                          [](const Trapezoidal1D&) { return std::string("trapezoidal"); },
                          [](const ProductLaw& p) {
                              std::string s = "product(";
                              for (std::size_t i = 0; i < p.parts.size(); ++i) {
                                  if (i) s += ",";
                                  s += law_tag(p.parts[i]);
                              }
                              return s + ")";
                          },
                          [](const EmpiricalLaw& e) {
                              std::ostringstream os;
                              os << "empirical[" << e.sample.rows << "x" << e.sample.cols << "]";
                              return os.str();
                          },
                      },
                      law.v);
}

SampleBatch sample(const InputLaw& law, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    validate_law(law);
    const int d = law_dim(law);
    SampleBatch batch;
    batch.data = Matrix(n, d);
    batch.seed = seed;
    batch.law_tag = law_tag(law);
    Xoshiro256 rng(seed);
    for (int i = 0; i < n; ++i) fill_row(law, rng, batch.data.row(i));
    return batch;
}

double cdf_1d(const InputLaw& law, double z) {
    require_1d(law, "cdf_1d");
    return std::visit(Overload{
                          [&](const Triangular1D& t) { return triangular_cdf(t, z); },
                          [&](const Trapezoidal1D& t) { return trapezoidal_cdf(t, z); },
                          [&](const UniformBox& u) {
                              if (z <= u.lo[0]) return 0.0;
                              if (z >= u.hi[0]) return 1.0;
                              return (z - u.lo[0]) / (u.hi[0] - u.lo[0]);
                          },
                          [](const auto&) { return 0.0; },
                      },
                      law.v);
}

double quantile_1d(const InputLaw& law, double u) {
    require_1d(law, "quantile_1d");
    if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("quantile_1d: u outside [0,1]");
    return std::visit(Overload{
                          [&](const Triangular1D& t) { return triangular_quantile(t, u); },
                          [&](const Trapezoidal1D& t) { return trapezoidal_quantile(t, u); },
                          [&](const UniformBox& b) { return b.lo[0] + u * (b.hi[0] - b.lo[0]); },
                          [](const auto&) { return 0.0; },
                      },
                      law.v);
}

double pdf_1d(const InputLaw& law, double z) {
    require_1d(law, "pdf_1d");
    return std::visit(
        Overload{
            [&](const Triangular1D& t) {
                if (z < t.a || z > t.b) return 0.0;
                const double span = t.b - t.a;
                if (z < t.c) return 2.0 * (z - t.a) / (span * (t.c - t.a));
                if (z == t.c) return 2.0 / span;
                return 2.0 * (t.b - z) / (span * (t.b - t.c));
            },
            [&](const Trapezoidal1D& t) {
                if (z < t.a || z > t.d) return 0.0;
                const double h = trapezoid_height(t);
                if (z < t.b) return h * (z - t.a) / (t.b - t.a);
                if (z <= t.c) return h;
                return h * (t.d - z) / (t.d - t.c);
            },
            [&](const UniformBox& u) {
                if (z < u.lo[0] || z > u.hi[0]) return 0.0;
                return 1.0 / (u.hi[0] - u.lo[0]);
            },
            [](const auto&) { return 0.0; },
        },
        law.v);
}

nlohmann::json law_to_json(const InputLaw& law) {
    return std::visit(
        Overload{
            [](const UniformBox& u) {
                return nlohmann::json{{"type", "uniform_box"}, {"lo", vec_to_json(u.lo)}, {"hi", vec_to_json(u.hi)}};
            },
            [](const StdGaussian& g) { return nlohmann::json{{"type", "std_gaussian"}, {"dim", g.d}}; },
            [](const Triangle2D& t) {
                return nlohmann::json{{"type", "triangle_2d"},
                                      {"v1", {t.v1[0], t.v1[1]}},
                                      {"v2", {t.v2[0], t.v2[1]}},
                                      {"v3", {t.v3[0], t.v3[1]}}};
            },
            [](const Triangular1D& t) {
                return nlohmann::json{{"type", "triangular"}, {"a", t.a}, {"c", t.c}, {"b", t.b}};
            },
            [](const Trapezoidal1D& t) {
                return nlohmann::json{{"type", "trapezoidal"}, {"a", t.a}, {"b", t.b}, {"c", t.c}, {"d", t.d}};
            },
            [](const ProductLaw& p) {
                nlohmann::json parts = nlohmann::json::array();
                for (const InputLaw& part : p.parts) parts.push_back(law_to_json(part));
                return nlohmann::json{{"type", "product"}, {"parts", parts}};
            },
            [](const EmpiricalLaw& e) {
                return nlohmann::json{{"type", "empirical"},
                                      {"rows", e.sample.rows},
                                      {"cols", e.sample.cols},
                                      {"data", e.sample.a}};
            },
        },
        law.v);
}

InputLaw law_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    InputLaw law;
    if (type == "uniform_box") {
        law.v = UniformBox{vec_from_json(j.at("lo")), vec_from_json(j.at("hi"))};
    } else if (type == "std_gaussian") {
        law.v = StdGaussian{j.at("dim").get<int>()};
    } else if (type == "triangle_2d") {
        law.v = Triangle2D{point2_from_json(j.at("v1")), point2_from_json(j.at("v2")),
                           point2_from_json(j.at("v3"))};
    } else if (type == "triangular") {
        law.v = Triangular1D{j.at("a").get<double>(), j.at("c").get<double>(), j.at("b").get<double>()};
    } else if (type == "trapezoidal") {
        law.v = Trapezoidal1D{j.at("a").get<double>(), j.at("b").get<double>(), j.at("c").get<double>(),
                              j.at("d").get<double>()};
    } else if (type == "product") {
        ProductLaw p;
        for (const nlohmann::json& part : j.at("parts")) p.parts.push_back(law_from_json(part));
        law.v = std::move(p);
    } else if (type == "empirical") {
        EmpiricalLaw e;
        e.sample = Matrix(j.at("rows").get<int>(), j.at("cols").get<int>());
        e.sample.a = j.at("data").get<std::vector<double>>();
        if (e.sample.a.size() != static_cast<std::size_t>(e.sample.rows) * e.sample.cols)
            bad_law("empirical data length does not match rows*cols");
        law.v = std::move(e);
    } else {
        bad_law("unknown law type '" + type + "'");
    }
    validate_law(law);
    return law;
}

}  // namespace mfuq
