#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfuq/dense_net.hpp"
#include "mfuq/input_law.hpp"
#include "mfuq/linalg.hpp"

namespace mfuq {

// Invertible map from an input law's support onto (a subset of) R^d with a
// tractable log |det Jacobian|. Evaluation is const and thread-safe.
class Flow {
  public:
    virtual ~Flow() = default;
    virtual int dim() const = 0;
    // Returns y = T(x); when log_det is non-null it receives log|det dT(x)|.
    virtual Vec forward(const Vec& x, double* log_det = nullptr) const = 0;
    virtual Vec inverse(const Vec& y) const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json to_json() const = 0;
    virtual bool trainable() const { return false; }
};

// Flows optimizable by NLL descent expose a flat parameter vector.
class TrainableFlow : public Flow {
  public:
    bool trainable() const override { return true; }
    virtual std::size_t param_count() const = 0;
    virtual Vec get_params() const = 0;
    virtual void set_params(const Vec& p) = 0;
    // Accumulates into *param_grad (when non-null) the gradient of the
    // per-sample NLL contribution 0.5*||T(x)||^2 - log_det, and returns that
    // contribution.
    virtual double nll_backward(const Vec& x, Vec* param_grad) const = 0;
};

// Componentwise y_i = normal_quantile(F_i(x_i)) for independent 1D laws with
// closed-form CDFs (uniform interval, triangular, trapezoidal).
class AnalyticCdfFlow final : public Flow {
  public:
    explicit AnalyticCdfFlow(const InputLaw& law);  // decomposes product laws
    int dim() const override { return static_cast<int>(components_.size()); }
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "analytic_cdf"; }
    nlohmann::json to_json() const override;
    const std::vector<InputLaw>& components() const { return components_; }

  private:
    std::vector<InputLaw> components_;  // each 1D
};

// y = scale * (x - shift) componentwise; exact log-det.
class AffineFlow final : public Flow {
  public:
    AffineFlow(Vec scale, Vec shift);
    int dim() const override { return static_cast<int>(scale_.size()); }
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "affine"; }
    nlohmann::json to_json() const override;
    const Vec& scale() const { return scale_; }
    const Vec& shift() const { return shift_; }

  private:
    Vec scale_;
    Vec shift_;
};

// Componentwise atanh after the affine squeeze of (lo, hi) onto (-1, 1);
// maps the open box diffeomorphically onto R^d. Endpoints are a domain error.
class AtanhPremap final : public Flow {
  public:
    AtanhPremap(Vec lo, Vec hi);
    int dim() const override { return static_cast<int>(lo_.size()); }
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "atanh_premap"; }
    nlohmann::json to_json() const override;
    const Vec& lo() const { return lo_; }
    const Vec& hi() const { return hi_; }

  private:
    Vec lo_;
    Vec hi_;
};

// RealNVP-style stack of affine coupling layers with alternating binary
// masks. Scale outputs are bounded by s_max * tanh(raw). Conditioner nets are
// zero-initialized in their last layer, so the stack starts as the identity.
class CouplingStack final : public TrainableFlow {
  public:
    CouplingStack(int d, int n_layers, int hidden_width, int hidden_depth, double s_max,
                  std::uint64_t seed);
    int dim() const override { return d_; }
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "coupling_stack"; }
    nlohmann::json to_json() const override;

    std::size_t param_count() const override;
    Vec get_params() const override;
    void set_params(const Vec& p) override;
    double nll_backward(const Vec& x, Vec* param_grad) const override;

    static CouplingStack from_json(const nlohmann::json& j);

  private:
    struct Layer {
        DenseNet s_net;  // masked coords -> raw scales of the others
        DenseNet t_net;  // masked coords -> translations
        bool even_conditions;
    };
    CouplingStack() = default;
    void split(const Layer& layer, const Vec& x, Vec& cond, Vec& rest) const;
    void merge(const Layer& layer, const Vec& cond, const Vec& rest, Vec& x) const;

    int d_ = 0;
    double s_max_ = 2.0;
    std::vector<Layer> layers_;
};

// Monotone rational-quadratic spline on [-B, B] with K bins and identity
// tails; boundary derivatives pinned to 1 so the map is C^1 across the
// boundary. Parameters are unconstrained reals pushed through softmax
// (widths, heights) and softplus (interior derivatives).
class SplineFlow1D final : public TrainableFlow {
  public:
    SplineFlow1D(int n_bins, double half_width);
    int dim() const override { return 1; }
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "spline1d"; }
    nlohmann::json to_json() const override;

    std::size_t param_count() const override;
    Vec get_params() const override;
    void set_params(const Vec& p) override;
    double nll_backward(const Vec& x, Vec* param_grad) const override;

    static SplineFlow1D from_json(const nlohmann::json& j);

  private:
    int k_ = 8;
    double b_ = 4.0;
    Vec theta_;  // widths K, heights K, interior derivatives K-1
};

// Ordered composition; log-dets add. inverse applies parts in reverse.
class CompositeFlow final : public Flow {
  public:
    explicit CompositeFlow(std::vector<std::unique_ptr<Flow>> parts);
    int dim() const override;
    Vec forward(const Vec& x, double* log_det) const override;
    Vec inverse(const Vec& y) const override;
    std::string kind() const override { return "composite"; }
    nlohmann::json to_json() const override;

    int part_count() const { return static_cast<int>(parts_.size()); }
    const Flow& part(int i) const { return *parts_[i]; }
    Flow& part(int i) { return *parts_[i]; }

  private:
    std::vector<std::unique_ptr<Flow>> parts_;
};

struct FlowFitReport {
    double initial_nll = 0.0;
    double final_nll = 0.0;
    int epochs = 0;
    std::uint64_t seed = 0;
    Vec ks_per_coordinate;  // pushed-forward validation sample vs N(0,1)
    // Per-coordinate range of forward(training data); downstream consumers
    // clamp mapped latents to this box before inverting.
    Vec codomain_lo;
    Vec codomain_hi;
    int n_train = 0;
    int n_val = 0;
};

// Sum over rows of 0.5*||T(x)||^2 - log_det.
double nll_loss(const Flow& flow, const SampleBatch& batch);

// Full-batch Adam NLL fit. The flow must either be trainable itself or be a
// CompositeFlow whose only trainable part is the last one (the frozen prefix
// is applied to the data once). Keeps the best-NLL parameters seen. Throws on
// non-finite NLL with the epoch index.
FlowFitReport fit(Flow& flow, const SampleBatch& batch, const TrainConfig& cfg);

// Factories.
std::unique_ptr<Flow> make_analytic_cdf_flow(const InputLaw& law);
std::unique_ptr<Flow> atanh_premap(const Vec& lo, const Vec& hi);
std::unique_ptr<Flow> make_affine_flow(Vec scale, Vec shift);
// Affine map standardizing each column of data: y = (x - mean) / std.
std::unique_ptr<Flow> make_standardizer(const Matrix& data);
std::unique_ptr<Flow> make_coupling_stack(int d, int n_layers, int hidden_width, int hidden_depth,
                                          double s_max, std::uint64_t seed);
std::unique_ptr<Flow> make_spline_flow(int n_bins = 8, double half_width = 4.0);
std::unique_ptr<Flow> make_composite(std::vector<std::unique_ptr<Flow>> parts);

nlohmann::json flow_to_json(const Flow& flow);
std::unique_ptr<Flow> flow_from_json(const nlohmann::json& j);
std::unique_ptr<Flow> clone_flow(const Flow& flow);

// Applies forward to every row, discarding log-dets.
Matrix forward_rows(const Flow& flow, const Matrix& rows);
Matrix inverse_rows(const Flow& flow, const Matrix& rows);

// One-sample Kolmogorov-Smirnov distance to the standard normal CDF.
double ks_vs_standard_normal(Vec xs);

}  // namespace mfuq
