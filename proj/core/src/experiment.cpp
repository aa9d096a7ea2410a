#include "mfuq/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <thread>

#include "mfuq/linalg.hpp"
#include "mfuq/problems.hpp"
#include "mfuq/rng.hpp"

namespace mfuq {

namespace {

const std::set<std::string> kBenchmarks{"theoretical", "analytic", "reaction_diffusion",
                                        "external"};
const std::set<std::string> kMethods{"mc", "mfmc", "mfmc_as", "mfmc_ae"};

// Everything a repetition needs, resolved once per run. The reaction-
// diffusion initial condition lives inside the model closures, so all
// repetitions share it by construction.
struct Problem {
    ModelSpec hf;
    ModelSpec lf;
    std::function<Vec(const Vec&)> hf_to_lf;
    std::shared_ptr<const Flow> flow_hf, flow_lf;  // analytic input flows
    std::optional<AePair> exact_aes;
    std::shared_ptr<const Flow> s_hf, s_lf;  // analytic latent flows
};

Problem make_problem(const RunConfig& cfg) {
    Problem pb;
    if (cfg.benchmark == "theoretical") {
        const TheoreticalExample ex = theoretical_example();
        pb.hf = ex.hf;
        pb.lf = ex.lf;
        if (cfg.analytic_flow) {
            pb.flow_hf = ex.t;
            pb.flow_lf = ex.t;
            if (!cfg.model_as_encoder) pb.exact_aes = ex.aes;
            pb.s_hf = ex.s_hf;
            pb.s_lf = ex.s_lf;
        }
    } else if (cfg.benchmark == "analytic") {
        const AnalyticPair p = analytic_pair();
        pb.hf = p.hf;
        pb.lf = p.lf;
        if (cfg.analytic_flow) {
            pb.flow_hf = p.t;
            pb.flow_lf = p.t;
        }
    } else if (cfg.benchmark == "reaction_diffusion") {
        RDModels rd = rd_models(cfg.seed);
        pb.hf = std::move(rd.hf);
        pb.lf = std::move(rd.lf);
        pb.hf_to_lf = std::move(rd.hf_to_lf);
    } else {
        pb.hf = cfg.external->hf;
        pb.lf = cfg.external->lf;
        pb.hf_to_lf = cfg.external->hf_to_lf;
    }
    if (cfg.w_override) pb.lf.cost = *cfg.w_override;
    return pb;
}

PipelineConfig pipeline_config(const RunConfig& cfg, const Problem& pb, bool scatter) {
    PipelineConfig p;
    p.pilot_n = cfg.pilot_n;
    p.budget = cfg.budget;
    p.r = cfg.r;
    p.reuse_pilot = cfg.reuse_pilot;
    p.gradient_mode = cfg.analytic_gradient ? GradientMode::Analytic : GradientMode::Surrogate;
    p.flow_mode = cfg.analytic_flow ? FlowMode::Analytic : FlowMode::Learned;
    p.flow_train = cfg.flow_train;
    p.coupling_layers = cfg.coupling_layers;
    p.coupling_width = cfg.coupling_width;
    p.surrogate_search = cfg.surrogate_search;
    p.surrogate_epochs = cfg.surrogate_epochs;
    p.ae_train = cfg.ae_train;
    p.model_as_encoder = cfg.model_as_encoder;
    p.latent_flow_train = cfg.latent_flow_train;
    p.flow_hf_override = pb.flow_hf;
    p.flow_lf_override = pb.flow_lf;
    p.ae_override = pb.exact_aes;
    p.latent_flow_hf_override = pb.s_hf;
    p.latent_flow_lf_override = pb.s_lf;
    p.hf_to_lf = pb.hf_to_lf;
    p.record_pilot_scatter = scatter;
    return p;
}

struct RepResult {
    bool ok = false;
    EstimatorReport report;
    double pilot_rho = 0.0;
    bool has_rho = false;
    Vec scat_hf, scat_lf;
    std::string error;
};

RepResult run_plain_mfmc(const Problem& pb, const RunConfig& cfg, std::uint64_t rep_seed,
                         bool scatter) {
    RepResult out;
    const double w = pb.lf.cost;
    const ModelSpec lf_on_hf =
        pb.hf_to_lf ? reparametrize(pb.lf, pb.hf.law, pb.hf_to_lf, pb.lf.label + "_on_hf")
                    : pb.lf;

    const SampleBatch pilot = sample(pb.hf.law, cfg.pilot_n, derive_seed(rep_seed, 1));
    const Vec q_hf = evaluate_rows(pb.hf, pilot.data);
    const Vec q_lf = evaluate_rows(lf_on_hf, pilot.data);
    const double rho = pearson(q_hf, q_lf);
    const double beta = optimal_beta(q_hf, q_lf);
    out.pilot_rho = rho;
    out.has_rho = true;
    if (scatter) {
        out.scat_hf = q_hf;
        out.scat_lf = q_lf;
    }

    if (cfg.reuse_pilot) {
        // The pilot high-fidelity draws stay as the shared sample; leftover
        // budget buys extra low-fidelity evaluations only.
        const long long n_hf = cfg.pilot_n;
        const double room = (cfg.budget + w - static_cast<double>(n_hf)) / w;
        const long long n_lf =
            std::max(n_hf, static_cast<long long>(std::floor(room)));
        Vec q_lf_all = q_lf;
        if (n_lf > n_hf) {
            const SampleBatch extra = sample(
                pb.hf.law, static_cast<int>(n_lf - n_hf), derive_seed(rep_seed, 6));
            const Vec more = evaluate_rows(lf_on_hf, extra.data);
            q_lf_all.insert(q_lf_all.end(), more.begin(), more.end());
        }
        out.report = mfmc_combine(q_hf, q_lf_all, beta, w, rep_seed);
        out.report.provenance["reuse_pilot"] = true;
        out.report.provenance["rho_pilot"] = rho;
        out.ok = true;
        return out;
    }

    AllocationPlan plan = optimal_allocation(cfg.budget, w, rho);
    plan.beta = beta;
    plan.rho_pilot = rho;
    out.report = mfmc_estimate(pb.hf, lf_on_hf, plan, derive_seed(rep_seed, 6));
    out.ok = true;
    return out;
}

RepResult run_one(const Problem& pb, const RunConfig& cfg, const std::string& method,
                  std::uint64_t rep_seed, bool scatter) {
    RepResult out;
    try {
        if (method == "mc") {
            out.report = mc_estimate(pb.hf, std::llround(cfg.budget), rep_seed);
            out.ok = true;
        } else if (method == "mfmc") {
            out = run_plain_mfmc(pb, cfg, rep_seed, scatter);
        } else {
            const PipelineConfig p = pipeline_config(cfg, pb, scatter);
            out.report = method == "mfmc_as" ? pipeline_mfmc_as(pb.hf, pb.lf, p, rep_seed)
                                             : pipeline_mfmc_ae(pb.hf, pb.lf, p, rep_seed);
            out.pilot_rho = out.report.rho;
            out.has_rho = true;
            if (scatter && out.report.provenance.contains("pilot_scatter")) {
                out.scat_hf = out.report.provenance["pilot_scatter"]["hf"].get<Vec>();
                out.scat_lf = out.report.provenance["pilot_scatter"]["lf"].get<Vec>();
            }
            out.ok = true;
        }
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

std::string csv_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

void validate_run_config(const RunConfig& cfg) {
    if (!kBenchmarks.count(cfg.benchmark)) {
        throw std::invalid_argument("run config: unknown benchmark '" + cfg.benchmark + "'");
    }
    if (cfg.methods.empty()) throw std::invalid_argument("run config: no methods requested");
    std::set<std::string> seen;
    for (const auto& m : cfg.methods) {
        if (!kMethods.count(m)) {
            throw std::invalid_argument("run config: unknown method '" + m + "'");
        }
        if (!seen.insert(m).second) {
            throw std::invalid_argument("run config: duplicate method '" + m + "'");
        }
    }
    if (cfg.repetitions < 1) throw std::invalid_argument("run config: repetitions must be >= 1");
    const bool multifidelity = seen.size() > static_cast<std::size_t>(seen.count("mc"));
    if (multifidelity && cfg.pilot_n < 2) {
        throw std::invalid_argument(
            "run config: multifidelity methods need a pilot of at least 2");
    }
    if (!(cfg.budget >= 1.0)) throw std::invalid_argument("run config: budget must be >= 1");
    if (cfg.r < 1) throw std::invalid_argument("run config: r must be >= 1");
    if (cfg.workers < 1) throw std::invalid_argument("run config: workers must be >= 1");
    if (cfg.w_override && !(*cfg.w_override > 0.0 && *cfg.w_override <= 1.0)) {
        throw std::invalid_argument("run config: w must be in (0, 1]");
    }
    if ((cfg.analytic_flow || cfg.analytic_gradient) && cfg.benchmark != "theoretical" &&
        cfg.benchmark != "analytic") {
        throw std::invalid_argument(
            "run config: benchmark '" + cfg.benchmark + "' has no closed forms");
    }
    if (cfg.model_as_encoder && cfg.r != 1) {
        throw std::invalid_argument("run config: model-as-encoder needs r == 1");
    }
    if (cfg.benchmark == "external") {
        if (!cfg.external) {
            throw std::invalid_argument("run config: external benchmark without models");
        }
        validate_model(cfg.external->hf);
        validate_model(cfg.external->lf);
        if (!(cfg.external->lf.cost > 0.0 && cfg.external->lf.cost <= 1.0)) {
            throw std::invalid_argument("run config: external cost ratio must be in (0, 1]");
        }
    }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> kKeys{
        "benchmark",      "methods",          "pilot_n",
        "budget",         "w",                "r",
        "repetitions",    "seed",             "analytic_flow",
        "analytic_gradient", "model_as_encoder", "reuse_pilot",
        "workers",        "out_dir",          "trials",
        "surrogate_epochs", "flow_epochs",    "flow_learning_rate",
        "flow_scheduler", "ae_epochs",        "ae_learning_rate",
        "latent_flow_epochs", "latent_flow_learning_rate", "coupling_layers",
        "coupling_width"};
    for (const auto& item : j.items()) {
        if (!kKeys.count(item.key())) {
            throw std::invalid_argument("run config: unknown key '" + item.key() + "'");
        }
    }

    RunConfig cfg;
    cfg.benchmark = j.value("benchmark", cfg.benchmark);
    // Published experiment settings per benchmark.
    if (cfg.benchmark == "reaction_diffusion") {
        cfg.budget = 100.0;
        cfg.repetitions = 20;
    }
    if (j.contains("methods")) cfg.methods = j["methods"].get<std::vector<std::string>>();
    cfg.pilot_n = j.value("pilot_n", cfg.pilot_n);
    cfg.budget = j.value("budget", cfg.budget);
    if (j.contains("w")) cfg.w_override = j["w"].get<double>();
    cfg.r = j.value("r", cfg.r);
    cfg.repetitions = j.value("repetitions", cfg.repetitions);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.analytic_flow = j.value("analytic_flow", cfg.analytic_flow);
    cfg.analytic_gradient = j.value("analytic_gradient", cfg.analytic_gradient);
    cfg.model_as_encoder = j.value("model_as_encoder", cfg.model_as_encoder);
    cfg.reuse_pilot = j.value("reuse_pilot", cfg.reuse_pilot);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.surrogate_search.trials = j.value("trials", cfg.surrogate_search.trials);
    cfg.surrogate_epochs = j.value("surrogate_epochs", cfg.surrogate_epochs);
    cfg.flow_train.epochs = j.value("flow_epochs", cfg.flow_train.epochs);
    cfg.flow_train.learning_rate = j.value("flow_learning_rate", cfg.flow_train.learning_rate);
    cfg.flow_train.scheduler_factor = j.value("flow_scheduler", cfg.flow_train.scheduler_factor);
    cfg.ae_train.epochs = j.value("ae_epochs", cfg.ae_train.epochs);
    cfg.ae_train.learning_rate = j.value("ae_learning_rate", cfg.ae_train.learning_rate);
    cfg.latent_flow_train.epochs = j.value("latent_flow_epochs", cfg.latent_flow_train.epochs);
    cfg.latent_flow_train.learning_rate =
        j.value("latent_flow_learning_rate", cfg.latent_flow_train.learning_rate);
    cfg.coupling_layers = j.value("coupling_layers", cfg.coupling_layers);
    cfg.coupling_width = j.value("coupling_width", cfg.coupling_width);
    validate_run_config(cfg);
    return cfg;
}

// Deliberately omits out_dir and workers: neither changes the results, and
// the echoed config keeps summary files byte-identical across placements.
nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j{
        {"benchmark", cfg.benchmark},
        {"methods", cfg.methods},
        {"pilot_n", cfg.pilot_n},
        {"budget", cfg.budget},
        {"r", cfg.r},
        {"repetitions", cfg.repetitions},
        {"seed", cfg.seed},
        {"analytic_flow", cfg.analytic_flow},
        {"analytic_gradient", cfg.analytic_gradient},
        {"model_as_encoder", cfg.model_as_encoder},
        {"reuse_pilot", cfg.reuse_pilot},
        {"trials", cfg.surrogate_search.trials},
        {"surrogate_epochs", cfg.surrogate_epochs},
        {"flow_epochs", cfg.flow_train.epochs},
        {"ae_epochs", cfg.ae_train.epochs},
        {"latent_flow_epochs", cfg.latent_flow_train.epochs},
        {"coupling_layers", cfg.coupling_layers},
        {"coupling_width", cfg.coupling_width},
    };
    if (cfg.w_override) j["w"] = *cfg.w_override;
    if (cfg.external) j["external"] = true;
    return j;
}

ExperimentSummary run_experiment(const RunConfig& cfg) {
    validate_run_config(cfg);
    const Problem pb = make_problem(cfg);

    std::vector<std::vector<RepResult>> slots(cfg.methods.size());
    for (auto& s : slots) s.resize(static_cast<std::size_t>(cfg.repetitions));

    std::atomic<int> next_rep{0};
    auto worker = [&]() {
        for (;;) {
            const int rep = next_rep.fetch_add(1);
            if (rep >= cfg.repetitions) return;
            const std::uint64_t rep_seed =
                derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
            for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                slots[mi][static_cast<std::size_t>(rep)] =
                    run_one(pb, cfg, cfg.methods[mi], rep_seed, rep == 0);
            }
        }
    };
    const int n_workers = std::min(cfg.workers, cfg.repetitions);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    ExperimentSummary summary;
    summary.config = run_config_to_json(cfg);
    summary.seed = cfg.seed;
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        MethodSummary ms;
        ms.method = cfg.methods[mi];
        ms.requested = cfg.repetitions;
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            const RepResult& r = slots[mi][static_cast<std::size_t>(rep)];
            if (!r.ok) {
                ms.errors.push_back("rep " + std::to_string(rep) + ": " + r.error);
                continue;
            }
            ms.estimates.push_back(r.report.estimate);
            ms.reps.push_back(rep);
            if (r.has_rho) ms.correlations.push_back(r.pilot_rho);
            ms.rows.push_back(std::to_string(rep) + "," + std::to_string(cfg.seed) + "," +
                              report_csv_row(r.report));
            if (rep == 0) {
                ms.scatter_hf = r.scat_hf;
                ms.scatter_lf = r.scat_lf;
            }
        }
        ms.completed = static_cast<int>(ms.estimates.size());
        if (ms.completed >= 1) ms.mean = mean(ms.estimates);
        if (ms.completed >= 2) ms.stddev = std::sqrt(sample_variance(ms.estimates));
        summary.total_completed += ms.completed;
        summary.methods.push_back(std::move(ms));
    }

    if (!cfg.out_dir.empty()) write_experiment_files(summary, cfg.out_dir);
    return summary;
}

std::string density_csv(const std::string& method, double mean, double stddev,
                        std::uint64_t master_seed) {
    if (stddev < 0.0) throw std::invalid_argument("density_csv: negative spread");
    std::string out = "master_seed,method,x,pdf,flag\n";
    const std::string prefix = std::to_string(master_seed) + "," + method + ",";
    if (stddev == 0.0) {
        out += prefix + csv_double(mean) + ",1,spike\n";
        return out;
    }
    constexpr double inv_sqrt_two_pi = 0.39894228040143267794;
    for (int i = 0; i <= 200; ++i) {
        const double x = mean + stddev * (-4.0 + 8.0 * i / 200.0);
        const double z = (x - mean) / stddev;
        const double pdf = inv_sqrt_two_pi / stddev * std::exp(-0.5 * z * z);
        out += prefix + csv_double(x) + "," + csv_double(pdf) + ",\n";
    }
    return out;
}

nlohmann::json summary_to_json(const ExperimentSummary& s) {
    nlohmann::json j;
    j["config"] = s.config;
    j["budget_note"] =
        "pilot sampling and training costs are excluded from the budget, which buys "
        "only the final estimation samples";
    j["total_completed"] = s.total_completed;
    nlohmann::json methods = nlohmann::json::object();
    for (const MethodSummary& ms : s.methods) {
        methods[ms.method] = {
            {"requested", ms.requested}, {"completed", ms.completed},
            {"mean", ms.mean},           {"std", ms.stddev},
            {"estimates", ms.estimates}, {"reps", ms.reps},
            {"correlations", ms.correlations}, {"errors", ms.errors},
        };
    }
    j["methods"] = methods;
    return j;
}

void write_experiment_files(const ExperimentSummary& s, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + name + " in " + out_dir);
        f << content;
    };

    write("summary.json", summary_to_json(s).dump(2) + "\n");
    for (const MethodSummary& ms : s.methods) {
        std::string est = "rep,master_seed," + report_csv_header() + "\n";
        for (const auto& row : ms.rows) est += row + "\n";
        write("estimates_" + ms.method + ".csv", est);

        write("density_" + ms.method + ".csv",
              density_csv(ms.method, ms.mean, ms.completed >= 2 ? ms.stddev : 0.0, s.seed));

        std::string corr = "rep,master_seed,q_hf,q_lf\n";
        for (std::size_t i = 0; i < ms.scatter_hf.size(); ++i) {
            corr += "0," + std::to_string(s.seed) + "," + csv_double(ms.scatter_hf[i]) +
                    "," + csv_double(ms.scatter_lf[i]) + "\n";
        }
        write("correlation_" + ms.method + ".csv", corr);
    }
}

}  // namespace mfuq
