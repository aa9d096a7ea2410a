#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <mfuq/experiment.hpp>
#include <mfuq/problems.hpp>

namespace {

nlohmann::json matrix_json(const mfuq::Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols; ++j) row.push_back(m.a[static_cast<std::size_t>(i * m.cols + j)]);
        rows.push_back(row);
    }
    return rows;
}

mfuq::Vec matrix_col(const mfuq::Matrix& m, int j) {
    mfuq::Vec out(static_cast<std::size_t>(m.rows));
    for (int i = 0; i < m.rows; ++i) out[static_cast<std::size_t>(i)] = m.a[static_cast<std::size_t>(i * m.cols + j)];
    return out;
}

int cmd_run(const std::string& config_path, bool have_seed, std::uint64_t seed,
            bool have_workers, int workers, const std::string& out_dir) {
    mfuq::RunConfig cfg;
    try {
        std::ifstream f(config_path);
        if (!f) {
            std::cerr << "cannot open " << config_path << "\n";
            return 1;
        }
        cfg = mfuq::run_config_from_json(nlohmann::json::parse(f));
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    if (have_seed) cfg.seed = seed;
    if (have_workers) cfg.workers = workers;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    try {
        const mfuq::ExperimentSummary s = mfuq::run_experiment(cfg);
        for (const auto& m : s.methods) {
            std::printf("%-8s mean % .10e  std %.10e  completed %d/%d\n", m.method.c_str(),
                        m.mean, m.stddev, m.completed, m.requested);
            for (const auto& err : m.errors) std::cerr << "  " << m.method << " " << err << "\n";
        }
        if (!cfg.out_dir.empty()) std::printf("wrote %s\n", cfg.out_dir.c_str());
        if (s.total_completed == 0) {
            std::cerr << "all repetitions failed\n";
            return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// Closed forms of the linear benchmark, for cross-checking a build by hand.
int cmd_oracles() {
    const mfuq::TheoreticalExample ex = mfuq::theoretical_example();
    nlohmann::json j{
        {"rho", ex.rho},
        {"rho_as", ex.rho_as},
        {"rho_ae", ex.rho_ae},
        {"c_hf", matrix_json(ex.c_hf)},
        {"c_lf", matrix_json(ex.c_lf)},
        {"w_hf", matrix_col(ex.as_hf.w, 0)},
        {"w_lf", matrix_col(ex.as_lf.w, 0)},
        {"decoder_hf_at_1", ex.aes.hf.decoder.forward({1.0})},
        {"decoder_lf_at_1", ex.aes.lf.decoder.forward({1.0})},
    };
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_rd_snapshot(const mfuq::RDConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
    try {
        mfuq::validate_rd_config(cfg);
        const mfuq::FieldPair ic = mfuq::rd_initial_condition(cfg.m, seed);
        const mfuq::FieldPair end = mfuq::rd_solve(cfg, ic);
        std::filesystem::create_directories(out_dir);
        const auto write = [&](const char* name, const mfuq::Matrix& field) {
            std::ofstream f(std::filesystem::path(out_dir) / name, std::ios::binary);
            if (!f) throw std::runtime_error(std::string("cannot write ") + name);
            f << mfuq::field_to_csv(field);
        };
        write("u0.csv", ic.u);
        write("v0.csv", ic.v);
        write("u.csv", end.u);
        write("v.csv", end.v);
        std::printf("qoi %.17g\n", mfuq::rd_qoi(end));
        std::printf("wrote %s\n", out_dir.c_str());
    } catch (const std::exception& e) {
        std::cerr << "rd-snapshot failed: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_report(const std::string& run_dir) {
    const auto path = std::filesystem::path(run_dir) / "summary.json";
    std::ifstream f(path);
    if (!f) {
        std::cerr << "no summary.json in " << run_dir << "\n";
        return 1;
    }
    const nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.contains("methods")) {
        std::cerr << "unreadable summary.json in " << run_dir << "\n";
        return 1;
    }
    const auto& cfg = j["config"];
    std::printf("benchmark %s  seed %llu  budget %g  repetitions %d\n",
                cfg.value("benchmark", std::string("?")).c_str(),
                static_cast<unsigned long long>(cfg.value("seed", 0ULL)),
                cfg.value("budget", 0.0), cfg.value("repetitions", 0));
    for (const auto& item : j["methods"].items()) {
        const auto& m = item.value();
        double rho_sum = 0.0;
        const auto& corr = m["correlations"];
        for (const auto& c : corr) rho_sum += c.get<double>();
        std::printf("%-8s mean % .10e  std %.10e  completed %d/%d", item.key().c_str(),
                    m.value("mean", 0.0), m.value("std", 0.0), m.value("completed", 0),
                    m.value("requested", 0));
        if (!corr.empty()) std::printf("  pilot_rho %.4f", rho_sum / static_cast<double>(corr.size()));
        std::printf("\n");
        for (const auto& err : m["errors"]) std::printf("  %s\n", err.get<std::string>().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multifidelity Monte Carlo with learned shared subspaces"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute an experiment from a JSON config");
    std::string config_path;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out_dir;
    run->add_option("config", config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    auto* seed_opt = run->add_option("--seed", seed, "override the master seed");
    auto* workers_opt = run->add_option("--workers", workers, "repetition worker count");
    run->add_option("--out", out_dir, "output directory for report files");

    auto* oracles = app.add_subcommand("oracles", "print closed-form reference values");
    std::string which = "theoretical";
    oracles->add_option("benchmark", which, "benchmark with closed forms")
        ->required()
        ->check(CLI::IsMember({"theoretical"}));

    auto* snap = app.add_subcommand("rd-snapshot", "solve one reaction-diffusion sample and dump the fields");
    mfuq::RDConfig rd;
    std::uint64_t rd_seed = 0;
    std::string rd_out = "rd_snapshot";
    snap->add_option("--du", rd.d_u, "activator diffusion");
    snap->add_option("--dv", rd.d_v, "inhibitor diffusion");
    snap->add_option("--k", rd.k, "reaction offset");
    snap->add_option("--m", rd.m, "grid cells per side");
    snap->add_option("--steps", rd.steps, "time steps to final time 4");
    snap->add_option("--seed", rd_seed, "initial-condition seed");
    snap->add_option("--out", rd_out, "output directory");

    auto* report = app.add_subcommand("report", "pretty-print a run directory's summary");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "directory holding summary.json")->required();

    CLI11_PARSE(app, argc, argv);

    if (*run) return cmd_run(config_path, seed_opt->count() > 0, seed, workers_opt->count() > 0, workers, out_dir);
    if (*oracles) return cmd_oracles();
    if (*snap) return cmd_rd_snapshot(rd, rd_seed, rd_out);
    return cmd_report(run_dir);
}
