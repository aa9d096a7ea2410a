#include "mfuq/dense_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mfuq/optimizer.hpp"
#include "mfuq/rng.hpp"

namespace mfuq {

namespace {

double activate(Activation act, double z) {
    switch (act) {
        case Activation::Tanh:
            return std::tanh(z);
        case Activation::ReLU:
            return z > 0.0 ? z : 0.0;
    }
    return z;
}

// Derivative expressed through the activation value; exact for tanh,
// subgradient 0 at the ReLU kink.
double activate_deriv_from_value(Activation act, double a) {
    switch (act) {
        case Activation::Tanh:
            return 1.0 - a * a;
        case Activation::ReLU:
            return a > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

void check_shapes(const DenseNet& net) {
    if (net.sizes.size() < 2) throw std::invalid_argument("DenseNet: need at least input and output layer");
    if (net.weights.size() != net.sizes.size() - 1 || net.biases.size() != net.weights.size())
        throw std::invalid_argument("DenseNet: layer arrays inconsistent with sizes");
}

double batch_loss(Loss loss, const Vec& y, const double* target, int d) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
        const double r = y[k] - target[k];
        s += (loss == Loss::L1) ? std::fabs(r) : r * r;
    }
    return s;
}

void loss_grad(Loss loss, const Vec& y, const double* target, int d, double scale, Vec& out) {
    out.resize(d);
    for (int k = 0; k < d; ++k) {
        const double r = y[k] - target[k];
        if (loss == Loss::L1)
            out[k] = scale * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
        else
            out[k] = scale * 2.0 * r;
    }
}

}  // namespace

Vec AffineMap::apply(const Vec& x) const {
    if (x.size() != scale.size()) throw std::invalid_argument("AffineMap: size mismatch");
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = scale[i] * x[i] + shift[i];
    return y;
}

Vec AffineMap::invert(const Vec& y) const {
    if (y.size() != scale.size()) throw std::invalid_argument("AffineMap: size mismatch");
    Vec x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (scale[i] == 0.0) throw std::invalid_argument("AffineMap: non-invertible zero scale");
        x[i] = (y[i] - shift[i]) / scale[i];
    }
    return x;
}

AffineMap AffineMap::identity(int d) {
    return AffineMap{Vec(d, 1.0), Vec(d, 0.0)};
}

Vec DenseNet::forward(const Vec& x) const {
    return forward_cached(*this, x).y_raw;
}

double DenseNet::forward_scalar(const Vec& x) const {
    if (output_dim() != 1) throw std::invalid_argument("forward_scalar: output not scalar");
    return forward(x)[0];
}

Vec DenseNet::grad_input(const Vec& x) const {
    if (output_dim() != 1) throw std::invalid_argument("grad_input: output not scalar");
    const ForwardCache cache = forward_cached(*this, x);
    return backward(*this, cache, Vec{1.0}, nullptr);
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += weights[l].a.size() + biases[l].size();
    return n;
}

Vec DenseNet::flatten_params() const {
    Vec p;
    p.reserve(param_count());
    for (std::size_t l = 0; l < weights.size(); ++l) {
        p.insert(p.end(), weights[l].a.begin(), weights[l].a.end());
        p.insert(p.end(), biases[l].begin(), biases[l].end());
    }
    return p;
}

void DenseNet::unflatten_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("unflatten_params: size mismatch");
    std::size_t off = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        std::copy(p.begin() + off, p.begin() + off + weights[l].a.size(), weights[l].a.begin());
        off += weights[l].a.size();
        std::copy(p.begin() + off, p.begin() + off + biases[l].size(), biases[l].begin());
        off += biases[l].size();
    }
}

DenseNet make_dense_net(const std::vector<int>& sizes, Activation act, std::uint64_t seed) {
    if (sizes.size() < 2) throw std::invalid_argument("make_dense_net: need at least two layer sizes");
    for (int s : sizes)
        if (s < 1) throw std::invalid_argument("make_dense_net: layer sizes must be positive");
    DenseNet net;
    net.sizes = sizes;
    net.activation = act;
    net.in_map = AffineMap::identity(sizes.front());
    net.out_map = AffineMap::identity(sizes.back());
    Xoshiro256 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Matrix w(fan_out, fan_in);
        for (double& v : w.a) v = (2.0 * rng.uniform01() - 1.0) * bound;
        Vec b(fan_out);
        for (double& v : b) v = (2.0 * rng.uniform01() - 1.0) * bound;
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    return net;
}

void set_normalization(DenseNet& net, const Matrix& inputs, const Matrix& targets) {
    check_shapes(net);
    if (inputs.cols != net.input_dim() || targets.cols != net.output_dim())
        throw std::invalid_argument("set_normalization: data dims do not match net");
    if (inputs.rows < 1) throw std::invalid_argument("set_normalization: empty data");

    auto column_range = [](const Matrix& m, int j) {
        double lo = m(0, j), hi = m(0, j);
        for (int i = 1; i < m.rows; ++i) {
            lo = std::min(lo, m(i, j));
            hi = std::max(hi, m(i, j));
        }
        return std::pair<double, double>(lo, hi);
    };

    // in_map: raw -> [-1,1].
    for (int j = 0; j < inputs.cols; ++j) {
        const auto [lo, hi] = column_range(inputs, j);
        if (hi > lo) {
            net.in_map.scale[j] = 2.0 / (hi - lo);
            net.in_map.shift[j] = -(hi + lo) / (hi - lo);
        } else {
            net.in_map.scale[j] = 1.0;
            net.in_map.shift[j] = -lo;
        }
    }
    // out_map: [-1,1] -> raw.
    for (int j = 0; j < targets.cols; ++j) {
        const auto [lo, hi] = column_range(targets, j);
        if (hi > lo) {
            net.out_map.scale[j] = (hi - lo) / 2.0;
            net.out_map.shift[j] = (hi + lo) / 2.0;
        } else {
            net.out_map.scale[j] = 1.0;
            net.out_map.shift[j] = lo;
        }
    }
}

ForwardCache forward_cached(const DenseNet& net, const Vec& x) {
    check_shapes(net);
    if (static_cast<int>(x.size()) != net.input_dim())
        throw std::invalid_argument("forward: input size mismatch");
    ForwardCache cache;
    cache.x_raw = x;
    cache.layer_in.reserve(net.weights.size() + 1);
    cache.layer_in.push_back(net.in_map.apply(x));
    const int last = net.layer_count() - 1;
    for (int l = 0; l <= last; ++l) {
        const Vec& a = cache.layer_in.back();
        Vec z(net.sizes[l + 1]);
        for (int i = 0; i < net.sizes[l + 1]; ++i) {
            double s = net.biases[l][i];
            const double* w = net.weights[l].row(i);
            for (int j = 0; j < net.sizes[l]; ++j) s += w[j] * a[j];
            z[i] = (l == last) ? s : activate(net.activation, s);
        }
        cache.layer_in.push_back(std::move(z));
    }
    cache.y_raw = net.out_map.apply(cache.layer_in.back());
    return cache;
}

Vec backward(const DenseNet& net, const ForwardCache& cache, const Vec& dLdy_raw, Vec* param_grad) {
    const int last = net.layer_count() - 1;
    if (static_cast<int>(dLdy_raw.size()) != net.output_dim())
        throw std::invalid_argument("backward: output gradient size mismatch");
    if (param_grad && param_grad->size() != net.param_count())
        throw std::invalid_argument("backward: param_grad size mismatch");

    // delta = dL/d(activation of current layer output).
    Vec delta(net.output_dim());
    for (int k = 0; k < net.output_dim(); ++k) delta[k] = dLdy_raw[k] * net.out_map.scale[k];

    // Offsets of each layer's block in the flat parameter vector.
    std::vector<std::size_t> offsets(net.weights.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        offsets[l] = off;
        off += net.weights[l].a.size() + net.biases[l].size();
    }

    for (int l = last; l >= 0; --l) {
        const Vec& a = cache.layer_in[l];
        const Vec& out = cache.layer_in[l + 1];
        Vec dz(net.sizes[l + 1]);
        for (int i = 0; i < net.sizes[l + 1]; ++i)
            dz[i] = (l == last) ? delta[i]
                                : delta[i] * activate_deriv_from_value(net.activation, out[i]);
        if (param_grad) {
            double* gw = param_grad->data() + offsets[l];
            double* gb = gw + net.weights[l].a.size();
            for (int i = 0; i < net.sizes[l + 1]; ++i) {
                for (int j = 0; j < net.sizes[l]; ++j)
                    gw[static_cast<std::size_t>(i) * net.sizes[l] + j] += dz[i] * a[j];
                gb[i] += dz[i];
            }
        }
        Vec prev(net.sizes[l], 0.0);
        for (int i = 0; i < net.sizes[l + 1]; ++i) {
            const double* w = net.weights[l].row(i);
            for (int j = 0; j < net.sizes[l]; ++j) prev[j] += w[j] * dz[i];
        }
        delta = std::move(prev);
    }

    for (int j = 0; j < net.input_dim(); ++j) delta[j] *= net.in_map.scale[j];
    return delta;
}

TrainReport train(DenseNet& net, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg) {
    check_shapes(net);
    if (inputs.rows != targets.rows) throw std::invalid_argument("train: inputs/targets row mismatch");
    if (inputs.rows < 1) throw std::invalid_argument("train: empty data");
    if (inputs.cols != net.input_dim() || targets.cols != net.output_dim())
        throw std::invalid_argument("train: data dims do not match net");
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (!(cfg.scheduler_factor > 0.0 && cfg.scheduler_factor <= 1.0))
        throw std::invalid_argument("train: scheduler factor must be in (0,1]");
    if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0))
        throw std::invalid_argument("train: validation fraction must be in [0,1)");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");

    // Deterministic split: shuffle indices, last fraction is validation.
    const int n = inputs.rows;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    Xoshiro256 rng(cfg.seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1))]);
    const int n_val = static_cast<int>(cfg.validation_fraction * n);
    const int n_train = n - n_val;
    if (n_train < 1) throw std::invalid_argument("train: validation split leaves no training data");

    Matrix train_x(n_train, inputs.cols), train_y(n_train, targets.cols);
    for (int i = 0; i < n_train; ++i) {
        for (int j = 0; j < inputs.cols; ++j) train_x(i, j) = inputs(idx[i], j);
        for (int j = 0; j < targets.cols; ++j) train_y(i, j) = targets(idx[i], j);
    }
    set_normalization(net, train_x, train_y);

    Vec params = net.flatten_params();
    Adam adam(params.size(), cfg.learning_rate);
    Vec grad(params.size());
    Vec dLdy;

    TrainReport report;
    report.loss_history.reserve(cfg.epochs);
    report.epochs = cfg.epochs;
    report.seed = cfg.seed;

    const double inv_n = 1.0 / static_cast<double>(n_train);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_learning_rate(cfg.learning_rate *
                               std::pow(cfg.scheduler_factor, static_cast<double>(epoch)));
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss_sum = 0.0;
        for (int i = 0; i < n_train; ++i) {
            const ForwardCache cache = forward_cached(net, train_x.row_vec(i));
            loss_sum += batch_loss(cfg.loss, cache.y_raw, train_y.row(i), targets.cols);
            loss_grad(cfg.loss, cache.y_raw, train_y.row(i), targets.cols, inv_n, dLdy);
            backward(net, cache, dLdy, &grad);
        }
        report.loss_history.push_back(loss_sum * inv_n);
        adam.step(params, grad);
        net.unflatten_params(params);
    }

    double final_train = 0.0;
    for (int i = 0; i < n_train; ++i)
        final_train += batch_loss(cfg.loss, net.forward(train_x.row_vec(i)), train_y.row(i), targets.cols);
    report.final_train_loss = final_train * inv_n;

    if (n_val > 0) {
        double val = 0.0;
        for (int i = n_train; i < n; ++i)
            val += batch_loss(cfg.loss, net.forward(inputs.row_vec(idx[i])), targets.row(idx[i]),
                              targets.cols);
        report.final_validation_loss = val / static_cast<double>(n_val);
    } else {
        report.final_validation_loss = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

SearchResult random_search(const SearchSpace& space,
                           const std::function<double(const HyperParams&)>& objective) {
    if (space.trials < 1) throw std::invalid_argument("random_search: trial count must be >= 1");
    if (space.layers_min < 1 || space.layers_max < space.layers_min ||
        space.neurons_min < 1 || space.neurons_max < space.neurons_min)
        throw std::invalid_argument("random_search: invalid layer/neuron ranges");
    if (!(space.lr_min > 0.0 && space.lr_max >= space.lr_min))
        throw std::invalid_argument("random_search: invalid learning-rate range");
    if (!(space.scheduler_min > 0.0 && space.scheduler_max >= space.scheduler_min &&
          space.scheduler_max <= 1.0))
        throw std::invalid_argument("random_search: invalid scheduler range");

    SearchResult result;
    result.best_loss = std::numeric_limits<double>::infinity();
    for (int t = 0; t < space.trials; ++t) {
        const std::uint64_t trial_seed = derive_seed(space.seed, static_cast<std::uint64_t>(t));
        Xoshiro256 rng(trial_seed);
        HyperParams hp;
        hp.layers = space.layers_min +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(space.layers_max - space.layers_min + 1)));
        hp.neurons = space.neurons_min +
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(space.neurons_max - space.neurons_min + 1)));
        hp.learning_rate =
            std::exp(std::log(space.lr_min) +
                     rng.uniform01() * (std::log(space.lr_max) - std::log(space.lr_min)));
        hp.scheduler_factor =
            space.scheduler_min + rng.uniform01() * (space.scheduler_max - space.scheduler_min);
        hp.seed = derive_seed(trial_seed, 1);

        TrialRecord rec;
        rec.params = hp;
        try {
            rec.validation_loss = objective(hp);
            if (!std::isfinite(rec.validation_loss)) {
                rec.failed = true;
                rec.note = "non-finite validation loss";
            }
        } catch (const std::exception& e) {
            rec.failed = true;
            rec.note = e.what();
        }
        if (!rec.failed && rec.validation_loss < result.best_loss) {
            result.best_loss = rec.validation_loss;
            result.best = hp;
        }
        result.trials.push_back(std::move(rec));
    }
    if (!std::isfinite(result.best_loss)) throw std::runtime_error("random_search: all trials failed");
    return result;
}

FitResult fit_net_with_search(const Matrix& inputs, const Matrix& targets, const SearchSpace& space,
                              int epochs, Loss loss, double validation_fraction) {
    FitResult best;
    double best_score = std::numeric_limits<double>::infinity();
    auto objective = [&](const HyperParams& hp) {
        std::vector<int> sizes;
        sizes.push_back(inputs.cols);
        for (int l = 0; l < hp.layers; ++l) sizes.push_back(hp.neurons);
        sizes.push_back(targets.cols);
        DenseNet net = make_dense_net(sizes, Activation::Tanh, hp.seed);
        TrainConfig cfg;
        cfg.learning_rate = hp.learning_rate;
        cfg.scheduler_factor = hp.scheduler_factor;
        cfg.epochs = epochs;
        cfg.loss = loss;
        cfg.validation_fraction = validation_fraction;
        cfg.seed = hp.seed;
        const TrainReport report = train(net, inputs, targets, cfg);
        const double score =
            validation_fraction > 0.0 ? report.final_validation_loss : report.final_train_loss;
        if (std::isfinite(score) && score < best_score) {
            best_score = score;
            best.net = net;
            best.report = report;
        }
        return score;
    };
    best.search = random_search(space, objective);
    return best;
}

nlohmann::json net_to_json(const DenseNet& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < net.weights.size(); ++l)
        layers.push_back({{"weights", net.weights[l].a}, {"biases", net.biases[l]}});
    return {
        {"sizes", net.sizes},
        {"activation", net.activation == Activation::Tanh ? "tanh" : "relu"},
        {"layers", layers},
        {"in_scale", net.in_map.scale},
        {"in_shift", net.in_map.shift},
        {"out_scale", net.out_map.scale},
        {"out_shift", net.out_map.shift},
    };
}

DenseNet net_from_json(const nlohmann::json& j) {
    DenseNet net;
    net.sizes = j.at("sizes").get<std::vector<int>>();
    const std::string act = j.at("activation").get<std::string>();
    if (act == "tanh")
        net.activation = Activation::Tanh;
    else if (act == "relu")
        net.activation = Activation::ReLU;
    else
        throw std::invalid_argument("net_from_json: unknown activation '" + act + "'");
    for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
        const nlohmann::json& layer = j.at("layers").at(l);
        Matrix w(net.sizes[l + 1], net.sizes[l]);
        w.a = layer.at("weights").get<std::vector<double>>();
        if (w.a.size() != static_cast<std::size_t>(w.rows) * w.cols)
            throw std::invalid_argument("net_from_json: weight block size mismatch");
        Vec b = layer.at("biases").get<Vec>();
        if (b.size() != static_cast<std::size_t>(net.sizes[l + 1]))
            throw std::invalid_argument("net_from_json: bias block size mismatch");
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    net.in_map = AffineMap{j.at("in_scale").get<Vec>(), j.at("in_shift").get<Vec>()};
    net.out_map = AffineMap{j.at("out_scale").get<Vec>(), j.at("out_shift").get<Vec>()};
    check_shapes(net);
    return net;
}

}  // namespace mfuq
