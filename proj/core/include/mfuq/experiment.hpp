#pragma once

// Config-driven experiment runner: repeats the full train-allocate-estimate
// procedure with fresh pilots, aggregates the estimator distribution per
// method, and emits plot-ready report files.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfuq/estimators.hpp"

namespace mfuq {

// Caller-supplied models for the "external" benchmark; configs loaded from
// JSON cannot carry code, so this is reachable only through the library API.
struct ExternalProblem {
    ModelSpec hf;
    ModelSpec lf;
    std::function<Vec(const Vec&)> hf_to_lf;  // null when the laws agree
};

struct RunConfig {
    // theoretical | analytic | reaction_diffusion | external
    std::string benchmark = "theoretical";
    std::vector<std::string> methods{"mc", "mfmc", "mfmc_as", "mfmc_ae"};
    int pilot_n = 100;
    double budget = 300.0;               // in high-fidelity model evaluations
    std::optional<double> w_override;    // replaces the benchmark cost ratio
    int r = 1;
    int repetitions = 100;
    std::uint64_t seed = 0;
    bool analytic_flow = false;      // closed-form flows (and exact
                                     // autoencoders where the benchmark has them)
    bool analytic_gradient = false;  // model gradients instead of surrogates
    bool model_as_encoder = false;
    bool reuse_pilot = false;
    int workers = 1;
    std::string out_dir;  // empty: no files written

    // Training knobs forwarded to the pipelines.
    SearchSpace surrogate_search;
    int surrogate_epochs = 5000;
    TrainConfig flow_train;
    int coupling_layers = 6;
    int coupling_width = 8;
    AeTrainConfig ae_train;
    TrainConfig latent_flow_train;

    std::optional<ExternalProblem> external;
};

// Strict parse: unknown keys are rejected. Missing budget/repetitions fall
// back to the benchmark's published experiment settings.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Throws std::invalid_argument on structural problems (unknown benchmark or
// method, repetitions < 1, pilot too small for multifidelity methods,
// analytic flags on a benchmark without closed forms, ...).
void validate_run_config(const RunConfig& cfg);

struct MethodSummary {
    std::string method;
    int requested = 0;
    int completed = 0;
    double mean = 0.0;    // over completed repetitions
    double stddev = 0.0;  // sample standard deviation (0 when completed < 2)
    Vec estimates;                    // repetition order
    std::vector<int> reps;            // repetition index per estimate
    Vec correlations;                 // pilot correlation per completed rep
    std::vector<std::string> errors;  // "rep <i>: <message>"
    Vec scatter_hf, scatter_lf;       // rep-0 pilot value pairs (empty for mc)
    std::vector<std::string> rows;    // estimate CSV rows, repetition order
};

struct ExperimentSummary {
    nlohmann::json config;  // echo of the effective configuration
    std::uint64_t seed = 0;
    std::vector<MethodSummary> methods;
    int total_completed = 0;  // zero means the whole run failed
};

ExperimentSummary run_experiment(const RunConfig& cfg);

// Gaussian density of the estimator distribution on mean +/- 4 std, 201
// points; zero spread collapses to a single row flagged "spike".
std::string density_csv(const std::string& method, double mean, double stddev,
                        std::uint64_t master_seed);

nlohmann::json summary_to_json(const ExperimentSummary& s);

// summary.json, estimates_<m>.csv, density_<m>.csv, correlation_<m>.csv.
void write_experiment_files(const ExperimentSummary& s, const std::string& out_dir);

}  // namespace mfuq
