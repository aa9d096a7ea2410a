#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfuq/linalg.hpp"

namespace mfuq {

enum class Activation { Tanh, ReLU };

enum class Loss { L1, MSE };

// Componentwise y = scale * x + shift.
struct AffineMap {
    Vec scale;
    Vec shift;

    Vec apply(const Vec& x) const;
    Vec invert(const Vec& y) const;

    static AffineMap identity(int d);
};

// Fully connected net with identity output layer. in_map normalizes raw
// inputs to roughly [-1,1]; out_map denormalizes the last layer back to
// target units. Both default to identity.
struct DenseNet {
    std::vector<int> sizes;  // widths including input and output
    Activation activation = Activation::Tanh;
    std::vector<Matrix> weights;  // weights[l] has shape sizes[l+1] x sizes[l]
    std::vector<Vec> biases;
    AffineMap in_map;
    AffineMap out_map;

    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }

    Vec forward(const Vec& x) const;
    double forward_scalar(const Vec& x) const;  // output_dim() must be 1

    // Gradient of the scalar output w.r.t. the raw input (reverse mode,
    // exact; ReLU subgradient at kinks is 0).
    Vec grad_input(const Vec& x) const;

    std::size_t param_count() const;
    Vec flatten_params() const;
    void unflatten_params(const Vec& p);
};

// Weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
DenseNet make_dense_net(const std::vector<int>& sizes, Activation act, std::uint64_t seed);

// Per-coordinate affine maps sending the columns of X (and Y) to [-1,1];
// constant columns map to 0.
void set_normalization(DenseNet& net, const Matrix& inputs, const Matrix& targets);

// Forward pass keeping every layer's activations for the backward pass.
struct ForwardCache {
    Vec x_raw;
    std::vector<Vec> layer_in;  // layer_in[0] is the normalized input
    Vec y_raw;
};

ForwardCache forward_cached(const DenseNet& net, const Vec& x);

// Accumulates dL/dparams (flat layout matching flatten_params) into
// param_grad when non-null and returns dL/dx in raw input units.
// dLdy_raw is the loss gradient w.r.t. the denormalized output.
Vec backward(const DenseNet& net, const ForwardCache& cache, const Vec& dLdy_raw, Vec* param_grad);

struct TrainConfig {
    double learning_rate = 1e-3;
    double scheduler_factor = 1.0;  // lr_t = lr0 * factor^epoch
    int epochs = 5000;
    Loss loss = Loss::L1;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> loss_history;  // training loss per epoch, raw units
    double final_train_loss = 0.0;
    double final_validation_loss = 0.0;  // NaN when no validation split
    int epochs = 0;
    std::uint64_t seed = 0;
};

// Full-batch Adam on (inputs, targets); normalization is fitted from the
// training split before the first step. Deterministic per cfg.seed.
TrainReport train(DenseNet& net, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg);

struct SearchSpace {
    int layers_min = 1;
    int layers_max = 4;
    int neurons_min = 1;
    int neurons_max = 16;
    double lr_min = 1e-4;
    double lr_max = 1e-2;  // log-uniform
    double scheduler_min = 0.999;
    double scheduler_max = 0.9999;
    int trials = 20;
    std::uint64_t seed = 0;
};

struct HyperParams {
    int layers = 1;
    int neurons = 8;
    double learning_rate = 1e-3;
    double scheduler_factor = 0.9999;
    std::uint64_t seed = 0;
};

struct TrialRecord {
    HyperParams params;
    double validation_loss = 0.0;
    bool failed = false;
    std::string note;
};

struct SearchResult {
    HyperParams best;
    double best_loss = 0.0;
    std::vector<TrialRecord> trials;
};

// Draws trial hyperparameters from per-trial splitmix-derived streams and
// returns the argmin of the objective. Throws when every trial fails.
SearchResult random_search(const SearchSpace& space,
                           const std::function<double(const HyperParams&)>& objective);

struct FitResult {
    DenseNet net;
    TrainReport report;
    SearchResult search;
};

// Hyperparameter search where each trial trains a fresh net of shape
// {d_in, neurons x layers, d_out}; keeps the best trial's net.
FitResult fit_net_with_search(const Matrix& inputs, const Matrix& targets, const SearchSpace& space,
                              int epochs, Loss loss = Loss::L1, double validation_fraction = 0.2);

nlohmann::json net_to_json(const DenseNet& net);
DenseNet net_from_json(const nlohmann::json& j);

}  // namespace mfuq
