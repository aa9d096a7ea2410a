#include "mfuq/flow.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "mfuq/optimizer.hpp"
#include "mfuq/rng.hpp"
#include "mfuq/special_functions.hpp"

namespace mfuq {

namespace {

constexpr double half_log_two_pi = 0.91893853320467274178;

// Forward-mode scalar for differentiating spline outputs w.r.t. one
// unconstrained parameter at a time.
struct Dual {
    double v = 0.0;
    double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
inline Dual operator+(Dual a, double b) { return {a.v + b, a.d}; }
inline Dual operator-(Dual a, double b) { return {a.v - b, a.d}; }
inline Dual operator-(double a, Dual b) { return {a - b.v, -b.d}; }
inline Dual operator*(Dual a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator*(double a, Dual b) { return {a * b.v, a * b.d}; }
inline Dual dual_exp(Dual a) {
    const double e = std::exp(a.v);
    return {e, a.d * e};
}
inline Dual dual_log(Dual a) { return {std::log(a.v), a.d / a.v}; }

inline double val(double x) { return x; }
inline double val(Dual x) { return x.v; }

inline double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }
inline Dual softplus(Dual t) {
    if (t.v > 30.0) return t;
    const Dual e = dual_exp(t);
    return dual_log(e + 1.0);
}

inline double dual_or_std_exp(double t) { return std::exp(t); }
inline Dual dual_or_std_exp(Dual t) { return dual_exp(t); }

// Knot grid of a monotone rational-quadratic spline: K+1 positions, values,
// and derivatives with d[0] = d[K] = 1.
template <typename S>
struct SplineKnots {
    std::vector<S> x, y, d;
};

template <typename S>
SplineKnots<S> build_knots(const std::vector<S>& theta, int k, double b) {
    SplineKnots<S> kn;
    kn.x.resize(k + 1);
    kn.y.resize(k + 1);
    kn.d.resize(k + 1);

    auto softmax_cum = [&](int offset, std::vector<S>& out) {
        double shift = val(theta[offset]);
        for (int i = 1; i < k; ++i) shift = std::max(shift, val(theta[offset + i]));
        S total = theta[0] * 0.0;  // zero of type S
        std::vector<S> e(k);
        for (int i = 0; i < k; ++i) {
            e[i] = dual_or_std_exp(theta[offset + i] - shift);
            total = total + e[i];
        }
        out[0] = theta[0] * 0.0 + (-b);
        for (int i = 0; i < k; ++i) out[i + 1] = out[i] + (2.0 * b) * (e[i] / total);
    };
    softmax_cum(0, kn.x);
    softmax_cum(k, kn.y);

    kn.d[0] = theta[0] * 0.0 + 1.0;
    kn.d[k] = theta[0] * 0.0 + 1.0;
    for (int i = 1; i < k; ++i) kn.d[i] = softplus(theta[2 * k + i - 1]);
    return kn;
}

// Evaluates the spline and its u-derivative at a concrete point u inside
// [-B, B]. S carries the dependence on one unconstrained parameter.
template <typename S>
void spline_eval(const SplineKnots<S>& kn, int k, double u, S* y_out, S* deriv_out) {
    int bin = 0;
    for (int i = k - 1; i >= 0; --i) {
        if (u >= val(kn.x[i])) {
            bin = i;
            break;
        }
    }
    const S w = kn.x[bin + 1] - kn.x[bin];
    const S h = kn.y[bin + 1] - kn.y[bin];
    const S s = h / w;
    const S xi = (u - kn.x[bin]) / w;
    const S xi1 = 1.0 - xi;
    const S q = xi * xi1;
    const S den = s + (kn.d[bin + 1] + kn.d[bin] - 2.0 * s) * q;
    *y_out = kn.y[bin] + h * (s * xi * xi + kn.d[bin] * q) / den;
    *deriv_out = s * s * (kn.d[bin + 1] * xi * xi + 2.0 * s * q + kn.d[bin] * xi1 * xi1) / (den * den);
}

std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

void zero_last_layer(DenseNet& net) {
    std::fill(net.weights.back().a.begin(), net.weights.back().a.end(), 0.0);
    std::fill(net.biases.back().begin(), net.biases.back().end(), 0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// AnalyticCdfFlow

AnalyticCdfFlow::AnalyticCdfFlow(const InputLaw& law) {
    std::function<void(const InputLaw&)> collect = [&](const InputLaw& l) {
        if (const auto* box = std::get_if<UniformBox>(&l.v)) {
            for (std::size_t i = 0; i < box->lo.size(); ++i) {
                if (!(box->lo[i] < box->hi[i]))
                    throw std::invalid_argument("AnalyticCdfFlow: degenerate box coordinate");
                components_.push_back(InputLaw{UniformBox{{box->lo[i]}, {box->hi[i]}}});
            }
        } else if (std::holds_alternative<Triangular1D>(l.v) ||
                   std::holds_alternative<Trapezoidal1D>(l.v)) {
            components_.push_back(l);
        } else if (const auto* prod = std::get_if<ProductLaw>(&l.v)) {
            for (const InputLaw& part : prod->parts) collect(part);
        } else {
            throw std::invalid_argument("AnalyticCdfFlow: law has no closed-form 1D CDF");
        }
    };
    collect(law);
    if (components_.empty()) throw std::invalid_argument("AnalyticCdfFlow: empty law");
}

Vec AnalyticCdfFlow::forward(const Vec& x, double* log_det) const {
    if (x.size() != components_.size()) throw std::invalid_argument("AnalyticCdfFlow: size mismatch");
    Vec y(x.size());
    double ld = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = cdf_1d(components_[i], x[i]);
        if (!(u > 0.0 && u < 1.0))
            throw std::domain_error("AnalyticCdfFlow: input outside the open support");
        y[i] = normal_quantile(u);
        // dy/dx = f(x) / phi(y).
        ld += std::log(pdf_1d(components_[i], x[i])) + half_log_two_pi + 0.5 * y[i] * y[i];
    }
    if (log_det) *log_det = ld;
    return y;
}

Vec AnalyticCdfFlow::inverse(const Vec& y) const {
    if (y.size() != components_.size()) throw std::invalid_argument("AnalyticCdfFlow: size mismatch");
    Vec x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        x[i] = quantile_1d(components_[i], normal_cdf(y[i]));
    return x;
}

nlohmann::json AnalyticCdfFlow::to_json() const {
    nlohmann::json comps = nlohmann::json::array();
    for (const InputLaw& c : components_) comps.push_back(law_to_json(c));
    return {{"kind", kind()}, {"components", comps}};
}

// ---------------------------------------------------------------------------
// AffineFlow

AffineFlow::AffineFlow(Vec scale, Vec shift) : scale_(std::move(scale)), shift_(std::move(shift)) {
    if (scale_.empty() || scale_.size() != shift_.size())
        throw std::invalid_argument("AffineFlow: scale/shift size mismatch");
    for (double s : scale_)
        if (s == 0.0 || !std::isfinite(s)) throw std::invalid_argument("AffineFlow: zero or non-finite scale");
}

Vec AffineFlow::forward(const Vec& x, double* log_det) const {
    if (x.size() != scale_.size()) throw std::invalid_argument("AffineFlow: size mismatch");
    Vec y(x.size());
    double ld = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = scale_[i] * (x[i] - shift_[i]);
        ld += std::log(std::fabs(scale_[i]));
    }
    if (log_det) *log_det = ld;
    return y;
}

Vec AffineFlow::inverse(const Vec& y) const {
    if (y.size() != scale_.size()) throw std::invalid_argument("AffineFlow: size mismatch");
    Vec x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] / scale_[i] + shift_[i];
    return x;
}

nlohmann::json AffineFlow::to_json() const {
    return {{"kind", kind()}, {"scale", scale_}, {"shift", shift_}};
}

// ---------------------------------------------------------------------------
// AtanhPremap

AtanhPremap::AtanhPremap(Vec lo, Vec hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.empty() || lo_.size() != hi_.size())
        throw std::invalid_argument("AtanhPremap: lo/hi size mismatch");
    for (std::size_t i = 0; i < lo_.size(); ++i)
        if (!(lo_[i] < hi_[i])) throw std::invalid_argument("AtanhPremap: needs lo < hi");
}

Vec AtanhPremap::forward(const Vec& x, double* log_det) const {
    if (x.size() != lo_.size()) throw std::invalid_argument("AtanhPremap: size mismatch");
    Vec y(x.size());
    double ld = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = 2.0 * (x[i] - lo_[i]) / (hi_[i] - lo_[i]) - 1.0;
        if (!(s > -1.0 && s < 1.0))
            throw std::domain_error("AtanhPremap: input outside the open box");
        y[i] = std::atanh(s);
        ld += std::log(2.0 / ((hi_[i] - lo_[i]) * (1.0 - s * s)));
    }
    if (log_det) *log_det = ld;
    return y;
}

Vec AtanhPremap::inverse(const Vec& y) const {
    if (y.size() != lo_.size()) throw std::invalid_argument("AtanhPremap: size mismatch");
    Vec x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        x[i] = lo_[i] + (std::tanh(y[i]) + 1.0) * 0.5 * (hi_[i] - lo_[i]);
    return x;
}

nlohmann::json AtanhPremap::to_json() const {
    return {{"kind", kind()}, {"lo", lo_}, {"hi", hi_}};
}

// ---------------------------------------------------------------------------
// CouplingStack

CouplingStack::CouplingStack(int d, int n_layers, int hidden_width, int hidden_depth, double s_max,
                             std::uint64_t seed)
    : d_(d), s_max_(s_max) {
    if (d < 2) throw std::invalid_argument("CouplingStack: needs dimension >= 2");
    if (n_layers < 1 || hidden_width < 1 || hidden_depth < 1 || !(s_max > 0.0))
        throw std::invalid_argument("CouplingStack: invalid architecture");
    for (int l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.even_conditions = (l % 2 == 0);
        int m = 0;
        for (int i = 0; i < d; ++i)
            if (((i % 2 == 0)) == layer.even_conditions) ++m;
        const int u = d - m;
        std::vector<int> sizes;
        sizes.push_back(m);
        for (int h = 0; h < hidden_depth; ++h) sizes.push_back(hidden_width);
        sizes.push_back(u);
        layer.s_net = make_dense_net(sizes, Activation::Tanh,
                                     derive_seed(seed, static_cast<std::uint64_t>(2 * l)));
        layer.t_net = make_dense_net(sizes, Activation::Tanh,
                                     derive_seed(seed, static_cast<std::uint64_t>(2 * l + 1)));
        zero_last_layer(layer.s_net);
        zero_last_layer(layer.t_net);
        layers_.push_back(std::move(layer));
    }
}

void CouplingStack::split(const Layer& layer, const Vec& x, Vec& cond, Vec& rest) const {
    cond.clear();
    rest.clear();
    for (int i = 0; i < d_; ++i) {
        if (((i % 2 == 0)) == layer.even_conditions)
            cond.push_back(x[i]);
        else
            rest.push_back(x[i]);
    }
}

void CouplingStack::merge(const Layer& layer, const Vec& cond, const Vec& rest, Vec& x) const {
    x.resize(d_);
    std::size_t ci = 0, ri = 0;
    for (int i = 0; i < d_; ++i) {
        if (((i % 2 == 0)) == layer.even_conditions)
            x[i] = cond[ci++];
        else
            x[i] = rest[ri++];
    }
}

Vec CouplingStack::forward(const Vec& x, double* log_det) const {
    if (static_cast<int>(x.size()) != d_) throw std::invalid_argument("CouplingStack: size mismatch");
    Vec cur = x, cond, rest;
    double ld = 0.0;
    for (const Layer& layer : layers_) {
        split(layer, cur, cond, rest);
        const Vec raw = layer.s_net.forward(cond);
        const Vec t = layer.t_net.forward(cond);
        for (std::size_t k = 0; k < rest.size(); ++k) {
            const double s = s_max_ * std::tanh(raw[k]);
            rest[k] = rest[k] * std::exp(s) + t[k];
            ld += s;
        }
        merge(layer, cond, rest, cur);
    }
    if (log_det) *log_det = ld;
    return cur;
}

Vec CouplingStack::inverse(const Vec& y) const {
    if (static_cast<int>(y.size()) != d_) throw std::invalid_argument("CouplingStack: size mismatch");
    Vec cur = y, cond, rest;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        split(*it, cur, cond, rest);
        const Vec raw = it->s_net.forward(cond);
        const Vec t = it->t_net.forward(cond);
        for (std::size_t k = 0; k < rest.size(); ++k) {
            const double s = s_max_ * std::tanh(raw[k]);
            rest[k] = (rest[k] - t[k]) * std::exp(-s);
        }
        merge(*it, cond, rest, cur);
    }
    return cur;
}

std::size_t CouplingStack::param_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers_) n += layer.s_net.param_count() + layer.t_net.param_count();
    return n;
}

Vec CouplingStack::get_params() const {
    Vec p;
    p.reserve(param_count());
    for (const Layer& layer : layers_) {
        const Vec ps = layer.s_net.flatten_params();
        const Vec pt = layer.t_net.flatten_params();
        p.insert(p.end(), ps.begin(), ps.end());
        p.insert(p.end(), pt.begin(), pt.end());
    }
    return p;
}

void CouplingStack::set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("CouplingStack: param size mismatch");
    std::size_t off = 0;
    for (Layer& layer : layers_) {
        Vec ps(p.begin() + off, p.begin() + off + layer.s_net.param_count());
        off += layer.s_net.param_count();
        Vec pt(p.begin() + off, p.begin() + off + layer.t_net.param_count());
        off += layer.t_net.param_count();
        layer.s_net.unflatten_params(ps);
        layer.t_net.unflatten_params(pt);
    }
}

double CouplingStack::nll_backward(const Vec& x, Vec* param_grad) const {
    if (static_cast<int>(x.size()) != d_) throw std::invalid_argument("CouplingStack: size mismatch");
    if (param_grad && param_grad->size() != param_count())
        throw std::invalid_argument("CouplingStack: param_grad size mismatch");

    struct LayerCache {
        Vec cond, rest_in, s, exp_s;
        ForwardCache s_cache, t_cache;
    };
    std::vector<LayerCache> caches(layers_.size());

    Vec cur = x, cond, rest;
    double ld = 0.0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        split(layer, cur, cond, rest);
        LayerCache& c = caches[l];
        c.cond = cond;
        c.rest_in = rest;
        c.s_cache = forward_cached(layer.s_net, cond);
        c.t_cache = forward_cached(layer.t_net, cond);
        c.s.resize(rest.size());
        c.exp_s.resize(rest.size());
        for (std::size_t k = 0; k < rest.size(); ++k) {
            c.s[k] = s_max_ * std::tanh(c.s_cache.y_raw[k]);
            c.exp_s[k] = std::exp(c.s[k]);
            rest[k] = rest[k] * c.exp_s[k] + c.t_cache.y_raw[k];
            ld += c.s[k];
        }
        merge(layer, cond, rest, cur);
    }
    const double nll = 0.5 * dot(cur, cur) - ld;
    if (!param_grad) return nll;

    // Parameter block offsets, same layout as get_params.
    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        offsets[l] = off;
        off += layers_[l].s_net.param_count() + layers_[l].t_net.param_count();
    }

    Vec g = cur;  // dL/dy from 0.5 ||y||^2
    Vec g_cond, g_rest, ds_raw, dt;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        const Layer& layer = layers_[l];
        const LayerCache& c = caches[l];
        split(layer, g, g_cond, g_rest);
        const std::size_t u = c.rest_in.size();
        ds_raw.resize(u);
        dt.resize(u);
        Vec d_rest_in(u);
        for (std::size_t k = 0; k < u; ++k) {
            // d(nll)/ds_k = g_rest_k * rest_in_k * e^{s_k} - 1 (log-det term).
            const double ds = g_rest[k] * c.rest_in[k] * c.exp_s[k] - 1.0;
            const double th = c.s[k] / s_max_;
            ds_raw[k] = ds * s_max_ * (1.0 - th * th);
            dt[k] = g_rest[k];
            d_rest_in[k] = g_rest[k] * c.exp_s[k];
        }
        Vec gs(layer.s_net.param_count(), 0.0);
        Vec gt(layer.t_net.param_count(), 0.0);
        const Vec gs_cond = backward(layer.s_net, c.s_cache, ds_raw, &gs);
        const Vec gt_cond = backward(layer.t_net, c.t_cache, dt, &gt);
        double* dst = param_grad->data() + offsets[l];
        for (std::size_t i = 0; i < gs.size(); ++i) dst[i] += gs[i];
        dst += gs.size();
        for (std::size_t i = 0; i < gt.size(); ++i) dst[i] += gt[i];

        for (std::size_t i = 0; i < g_cond.size(); ++i) g_cond[i] += gs_cond[i] + gt_cond[i];
        merge(layer, g_cond, d_rest_in, g);
    }
    return nll;
}

nlohmann::json CouplingStack::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& layer : layers_)
        layers.push_back({{"even_conditions", layer.even_conditions},
                          {"s_net", net_to_json(layer.s_net)},
                          {"t_net", net_to_json(layer.t_net)}});
    return {{"kind", kind()}, {"dim", d_}, {"s_max", s_max_}, {"layers", layers}};
}

CouplingStack CouplingStack::from_json(const nlohmann::json& j) {
    CouplingStack f;
    f.d_ = j.at("dim").get<int>();
    f.s_max_ = j.at("s_max").get<double>();
    for (const nlohmann::json& lj : j.at("layers")) {
        Layer layer;
        layer.even_conditions = lj.at("even_conditions").get<bool>();
        layer.s_net = net_from_json(lj.at("s_net"));
        layer.t_net = net_from_json(lj.at("t_net"));
        f.layers_.push_back(std::move(layer));
    }
    if (f.d_ < 2 || f.layers_.empty()) throw std::invalid_argument("CouplingStack: bad JSON");
    return f;
}

// ---------------------------------------------------------------------------
// SplineFlow1D

SplineFlow1D::SplineFlow1D(int n_bins, double half_width) : k_(n_bins), b_(half_width) {
    if (k_ < 2 || !(b_ > 0.0)) throw std::invalid_argument("SplineFlow1D: invalid configuration");
    theta_.assign(3 * k_ - 1, 0.0);
    // softplus(t) = 1 at t = log(e - 1): identity spline at init.
    const double t1 = std::log(std::exp(1.0) - 1.0);
    for (int i = 0; i < k_ - 1; ++i) theta_[2 * k_ + i] = t1;
}

Vec SplineFlow1D::forward(const Vec& x, double* log_det) const {
    if (x.size() != 1) throw std::invalid_argument("SplineFlow1D: input must be 1D");
    const double u = x[0];
    if (u < -b_ || u > b_) {  // identity tails
        if (log_det) *log_det = 0.0;
        return {u};
    }
    const SplineKnots<double> kn = build_knots(theta_, k_, b_);
    double y = 0.0, deriv = 0.0;
    spline_eval(kn, k_, u, &y, &deriv);
    if (log_det) *log_det = std::log(deriv);
    return {y};
}

Vec SplineFlow1D::inverse(const Vec& yv) const {
    if (yv.size() != 1) throw std::invalid_argument("SplineFlow1D: input must be 1D");
    const double y = yv[0];
    if (y < -b_ || y > b_) return {y};
    const SplineKnots<double> kn = build_knots(theta_, k_, b_);
    int bin = 0;
    for (int i = k_ - 1; i >= 0; --i) {
        if (y >= kn.y[i]) {
            bin = i;
            break;
        }
    }
    const double w = kn.x[bin + 1] - kn.x[bin];
    const double h = kn.y[bin + 1] - kn.y[bin];
    const double s = h / w;
    const double yr = y - kn.y[bin];
    const double delta = kn.d[bin + 1] + kn.d[bin] - 2.0 * s;
    const double a = h * (s - kn.d[bin]) + yr * delta;
    const double bq = h * kn.d[bin] - yr * delta;
    const double c = -s * yr;
    const double disc = bq * bq - 4.0 * a * c;
    if (disc < 0.0) throw std::runtime_error("SplineFlow1D: inverse discriminant negative");
    const double xi = 2.0 * c / (-bq - std::sqrt(disc));
    return {kn.x[bin] + xi * w};
}

std::size_t SplineFlow1D::param_count() const { return theta_.size(); }

Vec SplineFlow1D::get_params() const { return theta_; }

void SplineFlow1D::set_params(const Vec& p) {
    if (p.size() != theta_.size()) throw std::invalid_argument("SplineFlow1D: param size mismatch");
    theta_ = p;
}

double SplineFlow1D::nll_backward(const Vec& x, Vec* param_grad) const {
    if (x.size() != 1) throw std::invalid_argument("SplineFlow1D: input must be 1D");
    const double u = x[0];
    if (u < -b_ || u > b_) return 0.5 * u * u;  // tails carry no parameters
    const SplineKnots<double> kn = build_knots(theta_, k_, b_);
    double y = 0.0, deriv = 0.0;
    spline_eval(kn, k_, u, &y, &deriv);
    const double nll = 0.5 * y * y - std::log(deriv);
    if (!param_grad) return nll;
    if (param_grad->size() != theta_.size())
        throw std::invalid_argument("SplineFlow1D: param_grad size mismatch");

    std::vector<Dual> th(theta_.size());
    for (std::size_t i = 0; i < theta_.size(); ++i) th[i] = {theta_[i], 0.0};
    for (std::size_t p = 0; p < theta_.size(); ++p) {
        th[p].d = 1.0;
        const SplineKnots<Dual> dkn = build_knots(th, k_, b_);
        Dual dy, dderiv;
        spline_eval(dkn, k_, u, &dy, &dderiv);
        (*param_grad)[p] += dy.v * dy.d - dderiv.d / dderiv.v;
        th[p].d = 0.0;
    }
    return nll;
}

nlohmann::json SplineFlow1D::to_json() const {
    return {{"kind", kind()}, {"bins", k_}, {"half_width", b_}, {"theta", theta_}};
}

SplineFlow1D SplineFlow1D::from_json(const nlohmann::json& j) {
    SplineFlow1D f(j.at("bins").get<int>(), j.at("half_width").get<double>());
    f.theta_ = j.at("theta").get<Vec>();
    if (f.theta_.size() != static_cast<std::size_t>(3 * f.k_ - 1))
        throw std::invalid_argument("SplineFlow1D: bad JSON parameter count");
    return f;
}

// ---------------------------------------------------------------------------
// CompositeFlow

CompositeFlow::CompositeFlow(std::vector<std::unique_ptr<Flow>> parts) : parts_(std::move(parts)) {
    if (parts_.empty()) throw std::invalid_argument("CompositeFlow: needs at least one part");
    for (const auto& p : parts_) {
        if (!p) throw std::invalid_argument("CompositeFlow: null part");
        if (p->dim() != parts_.front()->dim())
            throw std::invalid_argument("CompositeFlow: dimension mismatch between parts");
    }
}

int CompositeFlow::dim() const { return parts_.front()->dim(); }

Vec CompositeFlow::forward(const Vec& x, double* log_det) const {
    Vec cur = x;
    double total = 0.0;
    for (const auto& p : parts_) {
        double ld = 0.0;
        cur = p->forward(cur, log_det ? &ld : nullptr);
        total += ld;
    }
    if (log_det) *log_det = total;
    return cur;
}

Vec CompositeFlow::inverse(const Vec& y) const {
    Vec cur = y;
    for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) cur = (*it)->inverse(cur);
    return cur;
}

nlohmann::json CompositeFlow::to_json() const {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : parts_) parts.push_back(p->to_json());
    return {{"kind", kind()}, {"parts", parts}};
}

// ---------------------------------------------------------------------------
// Loss and fitting

double nll_loss(const Flow& flow, const SampleBatch& batch) {
    if (batch.data.rows < 1) throw std::invalid_argument("nll_loss: empty batch");
    if (batch.data.cols != flow.dim()) throw std::invalid_argument("nll_loss: dimension mismatch");
    double total = 0.0;
    for (int i = 0; i < batch.data.rows; ++i) {
        double ld = 0.0;
        const Vec y = flow.forward(batch.data.row_vec(i), &ld);
        total += 0.5 * dot(y, y) - ld;
    }
    return total;
}

FlowFitReport fit(Flow& flow, const SampleBatch& batch, const TrainConfig& cfg) {
    if (batch.data.rows < 2) throw std::invalid_argument("fit: need at least 2 samples");
    if (batch.data.cols != flow.dim()) throw std::invalid_argument("fit: dimension mismatch");
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("fit: learning rate must be > 0");
    if (!(cfg.scheduler_factor > 0.0 && cfg.scheduler_factor <= 1.0))
        throw std::invalid_argument("fit: scheduler factor must be in (0,1]");
    if (cfg.epochs < 1) throw std::invalid_argument("fit: epochs must be >= 1");

    // Locate the trainable tail and the frozen prefix.
    TrainableFlow* tail = dynamic_cast<TrainableFlow*>(&flow);
    std::vector<const Flow*> prefix;
    if (!tail) {
        auto* comp = dynamic_cast<CompositeFlow*>(&flow);
        if (!comp) throw std::invalid_argument("fit: flow is not trainable");
        for (int i = 0; i < comp->part_count(); ++i) {
            if (i + 1 == comp->part_count()) {
                tail = dynamic_cast<TrainableFlow*>(&comp->part(i));
            } else {
                if (comp->part(i).trainable())
                    throw std::invalid_argument("fit: only the last composite part may be trainable");
                prefix.push_back(&comp->part(i));
            }
        }
        if (!tail) throw std::invalid_argument("fit: composite has no trainable tail");
    }

    // Push data through the frozen prefix once; its log-dets are constants.
    const int n = batch.data.rows;
    Matrix pre(n, batch.data.cols);
    Vec prefix_ld(n, 0.0);
    for (int i = 0; i < n; ++i) {
        Vec row = batch.data.row_vec(i);
        for (const Flow* p : prefix) {
            double ld = 0.0;
            row = p->forward(row, &ld);
            prefix_ld[i] += ld;
        }
        for (int j = 0; j < pre.cols; ++j) pre(i, j) = row[j];
    }

    // Deterministic split.
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    Xoshiro256 rng(cfg.seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1))]);
    const int n_val = static_cast<int>(cfg.validation_fraction * n);
    const int n_train = n - n_val;
    if (n_train < 1) throw std::invalid_argument("fit: validation split leaves no training data");

    Matrix train_x(n_train, pre.cols);
    double train_prefix_ld = 0.0;
    for (int i = 0; i < n_train; ++i) {
        for (int j = 0; j < pre.cols; ++j) train_x(i, j) = pre(idx[i], j);
        train_prefix_ld += prefix_ld[idx[i]];
    }

    Vec params = tail->get_params();
    Adam adam(params.size(), cfg.learning_rate);
    Vec grad(params.size());

    FlowFitReport report;
    report.epochs = cfg.epochs;
    report.seed = cfg.seed;
    report.n_train = n_train;
    report.n_val = n_val;

    const double inv_n = 1.0 / static_cast<double>(n_train);
    double best_nll = std::numeric_limits<double>::infinity();
    Vec best_params = params;

    auto epoch_pass = [&](bool with_grad) {
        if (with_grad) std::fill(grad.begin(), grad.end(), 0.0);
        double nll = 0.0;
        for (int i = 0; i < n_train; ++i)
            nll += tail->nll_backward(train_x.row_vec(i), with_grad ? &grad : nullptr);
        return (nll - train_prefix_ld) * inv_n;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_learning_rate(cfg.learning_rate *
                               std::pow(cfg.scheduler_factor, static_cast<double>(epoch)));
        const double nll = epoch_pass(true);
        if (!std::isfinite(nll))
            throw std::runtime_error("fit: NLL diverged at epoch " + std::to_string(epoch));
        if (epoch == 0) report.initial_nll = nll;
        if (nll < best_nll) {
            best_nll = nll;
            best_params = params;
        }
        for (double& g : grad) g *= inv_n;
        adam.step(params, grad);
        tail->set_params(params);
    }
    {
        const double nll = epoch_pass(false);
        if (std::isfinite(nll) && nll < best_nll) {
            best_nll = nll;
            best_params = params;
        }
    }
    tail->set_params(best_params);
    report.final_nll = best_nll;

    // KS of the pushed-forward validation sample (training sample if none).
    const int ks_begin = n_val > 0 ? n_train : 0;
    const int ks_end = n_val > 0 ? n : n_train;
    const int d = flow.dim();
    std::vector<Vec> coords(d);
    for (int i = ks_begin; i < ks_end; ++i) {
        const Vec y = flow.forward(batch.data.row_vec(idx[i]), nullptr);
        for (int j = 0; j < d; ++j) coords[j].push_back(y[j]);
    }
    for (int j = 0; j < d; ++j) report.ks_per_coordinate.push_back(ks_vs_standard_normal(coords[j]));

    // Codomain box over the full batch, for downstream latent clamping.
    report.codomain_lo.assign(d, std::numeric_limits<double>::infinity());
    report.codomain_hi.assign(d, -std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i) {
        const Vec y = flow.forward(batch.data.row_vec(i), nullptr);
        for (int j = 0; j < d; ++j) {
            report.codomain_lo[j] = std::min(report.codomain_lo[j], y[j]);
            report.codomain_hi[j] = std::max(report.codomain_hi[j], y[j]);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Factories, serialization, helpers

std::unique_ptr<Flow> make_analytic_cdf_flow(const InputLaw& law) {
    return std::make_unique<AnalyticCdfFlow>(law);
}

std::unique_ptr<Flow> atanh_premap(const Vec& lo, const Vec& hi) {
    return std::make_unique<AtanhPremap>(lo, hi);
}

std::unique_ptr<Flow> make_affine_flow(Vec scale, Vec shift) {
    return std::make_unique<AffineFlow>(std::move(scale), std::move(shift));
}

std::unique_ptr<Flow> make_standardizer(const Matrix& data) {
    if (data.rows < 2) throw std::invalid_argument("make_standardizer: need at least 2 rows");
    Vec scale(data.cols), shift(data.cols);
    for (int j = 0; j < data.cols; ++j) {
        const Vec col = data.col_vec(j);
        const double sd = std::sqrt(sample_variance(col));
        if (!(sd > 0.0)) throw std::invalid_argument("make_standardizer: constant column");
        scale[j] = 1.0 / sd;
        shift[j] = mean(col);
    }
    return std::make_unique<AffineFlow>(std::move(scale), std::move(shift));
}

std::unique_ptr<Flow> make_coupling_stack(int d, int n_layers, int hidden_width, int hidden_depth,
                                          double s_max, std::uint64_t seed) {
    return std::make_unique<CouplingStack>(d, n_layers, hidden_width, hidden_depth, s_max, seed);
}

std::unique_ptr<Flow> make_spline_flow(int n_bins, double half_width) {
    return std::make_unique<SplineFlow1D>(n_bins, half_width);
}

std::unique_ptr<Flow> make_composite(std::vector<std::unique_ptr<Flow>> parts) {
    return std::make_unique<CompositeFlow>(std::move(parts));
}

nlohmann::json flow_to_json(const Flow& flow) { return flow.to_json(); }

std::unique_ptr<Flow> flow_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "analytic_cdf") {
        ProductLaw prod;
        for (const nlohmann::json& c : j.at("components")) prod.parts.push_back(law_from_json(c));
        return std::make_unique<AnalyticCdfFlow>(InputLaw{std::move(prod)});
    }
    if (kind == "affine")
        return std::make_unique<AffineFlow>(j.at("scale").get<Vec>(), j.at("shift").get<Vec>());
    if (kind == "atanh_premap")
        return std::make_unique<AtanhPremap>(j.at("lo").get<Vec>(), j.at("hi").get<Vec>());
    if (kind == "coupling_stack")
        return std::make_unique<CouplingStack>(CouplingStack::from_json(j));
    if (kind == "spline1d") return std::make_unique<SplineFlow1D>(SplineFlow1D::from_json(j));
    if (kind == "composite") {
        std::vector<std::unique_ptr<Flow>> parts;
        for (const nlohmann::json& p : j.at("parts")) parts.push_back(flow_from_json(p));
        return std::make_unique<CompositeFlow>(std::move(parts));
    }
    throw std::invalid_argument("flow_from_json: unknown kind '" + kind + "'");
}

std::unique_ptr<Flow> clone_flow(const Flow& flow) { return flow_from_json(flow.to_json()); }

Matrix forward_rows(const Flow& flow, const Matrix& rows) {
    Matrix out(rows.rows, rows.cols);
    for (int i = 0; i < rows.rows; ++i) {
        const Vec y = flow.forward(rows.row_vec(i), nullptr);
        for (int j = 0; j < rows.cols; ++j) out(i, j) = y[j];
    }
    return out;
}

Matrix inverse_rows(const Flow& flow, const Matrix& rows) {
    Matrix out(rows.rows, rows.cols);
    for (int i = 0; i < rows.rows; ++i) {
        const Vec x = flow.inverse(rows.row_vec(i));
        for (int j = 0; j < rows.cols; ++j) out(i, j) = x[j];
    }
    return out;
}

double ks_vs_standard_normal(Vec xs) {
    if (xs.empty()) throw std::invalid_argument("ks_vs_standard_normal: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = normal_cdf(xs[i]);
        d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
        d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
    }
    return d;
}

}  // namespace mfuq
