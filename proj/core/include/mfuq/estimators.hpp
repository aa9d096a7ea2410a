#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfuq/dense_net.hpp"
#include "mfuq/dimred.hpp"
#include "mfuq/flow.hpp"
#include "mfuq/input_law.hpp"
#include "mfuq/linalg.hpp"

namespace mfuq {

// A scalar model together with its input law and relative cost. The cost of
// one high-fidelity evaluation is the unit, so `cost` is the ratio w.
// `evaluate` must be deterministic; `gradient` is optional and analytic.
struct ModelSpec {
    std::string label;
    int d = 0;
    double cost = 1.0;
    InputLaw law;
    std::function<double(const Vec&)> evaluate;
    std::function<Vec(const Vec&)> gradient;
};

void validate_model(const ModelSpec& m);

// Evaluates a model on every row of xs, in row order. A non-finite value or a
// thrown model error is reported with the offending row index.
Vec evaluate_rows(const ModelSpec& m, const Matrix& xs);

// Rebases a model onto another input law through a deterministic input
// transform, e.g. an LF model consuming derived HF coordinates.
ModelSpec reparametrize(const ModelSpec& m, const InputLaw& new_law,
                        std::function<Vec(const Vec&)> transform, const std::string& label);

struct AllocationPlan {
    long long n_hf = 0;
    long long n_lf = 0;
    double gamma = 0.0;
    double beta = 0.0;
    double rho_pilot = 0.0;
    double budget = 0.0;
    bool gamma_capped = false;
};

// gamma = sqrt(rho^2 / (w (1 - rho^2))), N^HF = round(B / (1 + w gamma))
// clamped to >= 1, N^LF = round(gamma N^HF) clamped to >= N^HF. |rho| >= 1
// caps gamma at 1e4 and flags the plan. The total cost never exceeds B + w.
AllocationPlan optimal_allocation(double budget, double w, double rho);

void validate_plan(const AllocationPlan& plan, double w);

// beta = Cov(hf, lf) / Var(lf) with the 1/(n-1) convention.
double optimal_beta(const Vec& pilot_hf, const Vec& pilot_lf);

// sqrt(1 - rho^2) + sqrt(w rho^2): the factor multiplying the plain-MC
// estimator spread at optimal allocation.
double variance_reduction_factor(double rho, double w);

// |rho| > 4w / (1 + w)^2. Both sides are written to *lhs / *rhs when given.
bool mfmc_beneficial(double rho, double w, double* lhs = nullptr, double* rhs = nullptr);

// Half-width of the 90% Chebyshev interval: sqrt(10) sigma.
double chebyshev_halfwidth(double sigma);

struct EstimatorReport {
    std::string method;
    std::string qoi;
    double estimate = 0.0;
    double rho = 0.0;
    double beta = 0.0;
    long long n_hf = 0;
    long long n_lf = 0;
    double variance_proxy = 0.0;  // estimated Var of the estimator itself
    double halfwidth = 0.0;
    std::uint64_t seed = 0;
    nlohmann::json provenance;  // pipeline stages, factors, warnings
};

nlohmann::json report_to_json(const EstimatorReport& r);
std::string report_csv_header();
std::string report_csv_row(const EstimatorReport& r);

// Plain Monte Carlo on n fresh samples of the model's own law.
EstimatorReport mc_estimate(const ModelSpec& m, long long n, std::uint64_t seed);

// Two-sum control-variate combination from explicit paired values: q_hf holds
// the shared evaluations, q_lf all LF evaluations with the first q_hf.size()
// entries on the same inputs as q_hf. Both LF means run in index order, so
// with q_lf.size() == q_hf.size() the correction cancels exactly.
EstimatorReport mfmc_combine(const Vec& q_hf, const Vec& q_lf, double beta, double w,
                             std::uint64_t seed);

// Samples plan.n_lf inputs from hf.law, shares the first plan.n_hf with the
// HF model, and combines with plan.beta. lf_on_hf must consume HF inputs.
EstimatorReport mfmc_estimate(const ModelSpec& hf, const ModelSpec& lf_on_hf,
                              const AllocationPlan& plan, std::uint64_t seed);

// Diagonal of the Jacobian of flow.inverse at eta, for coordinate-wise flows
// (analytic CDF maps, affine, atanh premaps, composites of those). Throws for
// flows without a closed-form diagonal inverse Jacobian.
Vec inverse_diag_jacobian(const Flow& flow, const Vec& eta);

// Box in a flow's standard-normal codomain within which its inverse is
// trusted; mapped latents are clamped into it before inversion.
struct LatentBox {
    Vec lo, hi;
};

struct ClampLog {
    long long samples = 0;       // evaluations with at least one clamped coordinate
    long long coordinates = 0;   // total clamped coordinates
};

// Q_AS^LF(xi) = Q^LF((T^LF)^-1(W_lf W_hf^T T^HF(xi))). The returned model
// consumes HF-law inputs and keeps the LF cost ratio.
ModelSpec build_lf_as(const ModelSpec& lf, const InputLaw& hf_law,
                      std::shared_ptr<const Flow> t_hf, std::shared_ptr<const Flow> t_lf,
                      const ActiveSubspace& as_hf, const ActiveSubspace& as_lf,
                      std::optional<LatentBox> lf_box = std::nullopt,
                      std::shared_ptr<ClampLog> clamp_log = nullptr);

// Encoder/decoder pair per fidelity. With model_as_encoder the HF encoder is
// the scalar surrogate itself (r = 1) and the decoder application is elided:
// the modified LF output is (S^LF)^-1(align(S^HF(encoder(xi)))).
struct AePair {
    Autoencoder hf;
    Autoencoder lf;
    bool model_as_encoder = false;
};

// Q_AE^LF(xi) = Q^LF(D^LF((S^LF)^-1(align(S^HF(E^HF(xi)))))).
ModelSpec build_lf_ae(const ModelSpec& lf, const InputLaw& hf_law, const AePair& aes,
                      std::shared_ptr<const Flow> s_hf, std::shared_ptr<const Flow> s_lf,
                      const LatentAlignment& alignment,
                      std::optional<LatentBox> lf_box = std::nullopt,
                      std::shared_ptr<ClampLog> clamp_log = nullptr);

enum class GradientMode { Analytic, Surrogate, FiniteDifference };
enum class FlowMode { Analytic, Learned };

struct PipelineConfig {
    int pilot_n = 100;
    double budget = 300.0;
    int r = 1;
    bool reuse_pilot = false;  // keep pilot HF draws as the shared sample

    GradientMode gradient_mode = GradientMode::FiniteDifference;
    FlowMode flow_mode = FlowMode::Analytic;
    double fd_step = 1e-4;

    // Learned input gaussianizers: spline pipeline in 1D, coupling stack above.
    TrainConfig flow_train;
    int coupling_layers = 6;
    int coupling_width = 8;
    int coupling_depth = 1;
    int spline_bins = 8;
    double spline_half_width = 4.0;

    // Scalar surrogates (gradient source, AE reconstruction path).
    SearchSpace surrogate_search;
    int surrogate_epochs = 5000;

    // Autoencoders.
    std::vector<int> ae_encoder_hidden{8};
    std::vector<int> ae_decoder_hidden{8};
    AeTrainConfig ae_train;
    bool model_as_encoder = false;

    // Latent standardizers for the AE path.
    FlowMode latent_flow_mode = FlowMode::Learned;
    TrainConfig latent_flow_train;

    // Oracle injections for ideal-setting studies; when set they replace the
    // corresponding learned artifact.
    std::shared_ptr<const Flow> flow_hf_override;
    std::shared_ptr<const Flow> flow_lf_override;
    std::optional<ActiveSubspace> as_hf_override;
    std::optional<ActiveSubspace> as_lf_override;
    std::optional<AePair> ae_override;
    std::shared_ptr<const Flow> latent_flow_hf_override;
    std::shared_ptr<const Flow> latent_flow_lf_override;

    // Pairing transform feeding LF pilot inputs from HF pilot draws when the
    // laws differ; identity when null.
    std::function<Vec(const Vec&)> hf_to_lf;

    // Stash the pilot (HF, modified-LF) value pairs in the report provenance
    // under "pilot_scatter" for correlation plots.
    bool record_pilot_scatter = false;
};

// Shared-subspace MFMC through active subspaces: gaussianize inputs, build
// gradient matrices of the modified models, project, correlate on the pilot,
// allocate, and estimate on fresh samples (pilot kept only in reuse mode).
EstimatorReport pipeline_mfmc_as(const ModelSpec& hf, const ModelSpec& lf,
                                 const PipelineConfig& cfg, std::uint64_t seed);

// Shared-subspace MFMC through autoencoders and latent standardizers.
EstimatorReport pipeline_mfmc_ae(const ModelSpec& hf, const ModelSpec& lf,
                                 const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace mfuq
