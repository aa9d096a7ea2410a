// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line and
// the binary exits nonzero if any fails. An optional argv[1] selects a single
// criterion by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <mfuq/experiment.hpp>
#include <mfuq/problems.hpp>
#include <mfuq/rng.hpp>
#include <mfuq/special_functions.hpp>

using namespace mfuq;

namespace {

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double median(Vec v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const MethodSummary& method_of(const ExperimentSummary& s, const std::string& name) {
    for (const auto& m : s.methods) {
        if (m.method == name) return m;
    }
    throw std::runtime_error("method " + name + " missing from summary");
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---- criterion 1: closed-form correlation ladder at one million samples ----

bool crit_correlation_ladder(std::string& detail) {
    const TheoreticalExample ex = theoretical_example();
    const int n = 1000000;

    const ModelSpec lf_as = build_lf_as(ex.lf, ex.hf.law, ex.t, ex.t, ex.as_hf, ex.as_lf);
    LatentAlignment align;
    align.perm = {0};
    align.sign = {1.0};
    const ModelSpec lf_ae = build_lf_ae(ex.lf, ex.hf.law, ex.aes, ex.s_hf, ex.s_lf, align);

    const SampleBatch batch = sample(ex.hf.law, n, 161803);
    const Vec q_hf = evaluate_rows(ex.hf, batch.data);
    const Vec q_lf = evaluate_rows(ex.lf, batch.data);
    const double rho = pearson(q_hf, q_lf);
    const double rho_as = pearson(q_hf, evaluate_rows(lf_as, batch.data));
    const double rho_ae = pearson(q_hf, evaluate_rows(lf_ae, batch.data));

    detail = fmt("rho %.4f (target %.4f +-0.005), rho_as %.4f (0.98 +-0.01), "
                 "rho_ae %.4f (0.99 +-0.01)",
                 rho, ex.rho, rho_as, rho_ae);
    return std::abs(rho - ex.rho) <= 0.005 && std::abs(rho_as - 0.98) <= 0.01 &&
           std::abs(rho_ae - 0.99) <= 0.01 && rho < rho_as && rho_as < rho_ae;
}

// ---- criterion 2: gradient outer-product matrices by Monte Carlo ----

bool crit_c_matrices(std::string& detail) {
    const TheoreticalExample ex = theoretical_example();
    const int n = 100000;
    const SampleBatch eta = sample(InputLaw{StdGaussian{2}}, n, 314);

    Matrix c_hf(2, 2), c_lf(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vec e = eta.data.row_vec(i);
        const Vec diag = inverse_diag_jacobian(*ex.t, e);
        const Vec x = ex.t->inverse(e);
        const Vec g_hf = ex.hf.gradient(x);
        const Vec g_lf = ex.lf.gradient(x);
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                c_hf(a, b) += g_hf[a] * diag[a] * g_hf[b] * diag[b];
                c_lf(a, b) += g_lf[a] * diag[a] * g_lf[b] * diag[b];
            }
        }
    }
    double worst = 0.0;
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            c_hf(a, b) /= n;
            c_lf(a, b) /= n;
            worst = std::max(worst, std::abs(c_hf(a, b) - ex.c_hf(a, b)));
            worst = std::max(worst, std::abs(c_lf(a, b) - ex.c_lf(a, b)));
        }
    }

    const ActiveSubspace as_mc = active_subspace(c_hf, 1);
    const double s = 1.0 / std::sqrt(2.0);
    const double dot = std::abs(as_mc.w(0, 0) * s + as_mc.w(1, 0) * s);
    const double angle = std::acos(std::min(1.0, dot));

    detail = fmt("max entry error %.2e (<= 0.01), eigenvector angle %.2e rad (<= 1e-3)",
                 worst, angle);
    return worst <= 0.01 && angle <= 1e-3;
}

// ---- criterion 3: every estimator is unbiased on the exponential pair ----

bool crit_unbiasedness(std::string& detail) {
    RunConfig cfg;
    cfg.benchmark = "analytic";
    cfg.methods = {"mc", "mfmc", "mfmc_as", "mfmc_ae"};
    cfg.pilot_n = 100;
    cfg.budget = 300.0;
    cfg.repetitions = 100;
    cfg.seed = 20260;
    cfg.analytic_flow = true;
    cfg.analytic_gradient = true;
    cfg.model_as_encoder = true;
    cfg.surrogate_search = SearchSpace{2, 2, 12, 12, 1e-4, 1e-2, 0.999, 0.9999, 1, 0};
    cfg.surrogate_epochs = 800;
    cfg.latent_flow_train.learning_rate = 0.05;
    cfg.latent_flow_train.scheduler_factor = 0.995;
    cfg.latent_flow_train.epochs = 150;

    const double exact = analytic_pair().exact_mean_hf;
    const ExperimentSummary s = run_experiment(cfg);

    bool ok = s.total_completed == 400;
    std::string parts;
    for (const auto& m : s.methods) {
        const double z = (m.mean - exact) / (m.stddev / std::sqrt(100.0));
        ok = ok && std::abs(z) < 4.0 && m.completed == 100;
        parts += fmt("%s z=%.2f ", m.method.c_str(), z);
    }
    detail = parts + "(|z| < 4 each)";
    return ok;
}

// ---- criterion 4: variance ordering, learned and ideal configurations ----

bool crit_variance_ordering(std::string& detail) {
    RunConfig learned;
    learned.benchmark = "analytic";
    learned.methods = {"mc", "mfmc", "mfmc_as", "mfmc_ae"};
    learned.pilot_n = 100;
    learned.budget = 300.0;
    learned.repetitions = 50;
    learned.seed = 401;
    learned.model_as_encoder = true;
    learned.surrogate_search = SearchSpace{2, 2, 12, 12, 1e-4, 1e-2, 0.999, 0.9999, 1, 0};
    learned.surrogate_epochs = 2500;
    learned.flow_train.learning_rate = 0.02;
    learned.flow_train.scheduler_factor = 0.995;
    learned.flow_train.epochs = 300;
    learned.coupling_layers = 4;
    learned.coupling_width = 8;
    learned.latent_flow_train.learning_rate = 0.05;
    learned.latent_flow_train.scheduler_factor = 0.995;
    learned.latent_flow_train.epochs = 200;

    const ExperimentSummary ls = run_experiment(learned);
    const double mc = method_of(ls, "mc").stddev;
    const double mf = method_of(ls, "mfmc").stddev;
    const double as = method_of(ls, "mfmc_as").stddev;
    const double ae = method_of(ls, "mfmc_ae").stddev;

    RunConfig ideal = learned;
    ideal.seed = 402;
    ideal.methods = {"mfmc_as"};
    ideal.analytic_flow = true;
    ideal.analytic_gradient = true;
    const double as_ideal = method_of(run_experiment(ideal), "mfmc_as").stddev;

    detail = fmt("learned std: mc %.4f > mfmc %.4f > as %.4f, ae %.4f < mfmc; "
                 "ideal as %.4f <= 1.1 x %.4f",
                 mc, mf, as, ae, as_ideal, as);
    return as < mf && mf < mc && ae < mf && as_ideal <= 1.1 * as &&
           ls.total_completed == 4 * 50;
}

// ---- criterion 5: flow round-trips, log-dets, and gaussianization ----

Matrix fd_jacobian(const Flow& flow, const Vec& x, double h) {
    const int d = flow.dim();
    Matrix j(d, d);
    for (int c = 0; c < d; ++c) {
        Vec xp = x, xm = x;
        xp[static_cast<std::size_t>(c)] += h;
        xm[static_cast<std::size_t>(c)] -= h;
        const Vec fp = flow.forward(xp);
        const Vec fm = flow.forward(xm);
        for (int r = 0; r < d; ++r) {
            j(r, c) = (fp[static_cast<std::size_t>(r)] - fm[static_cast<std::size_t>(r)]) /
                      (2.0 * h);
        }
    }
    return j;
}

double fd_log_abs_det(const Flow& flow, const Vec& x, double h) {
    const Matrix j = fd_jacobian(flow, x, h);
    if (flow.dim() == 1) return std::log(std::abs(j(0, 0)));
    return std::log(std::abs(j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0)));
}

void perturb_params(Flow& flow, double scale, std::uint64_t seed) {
    auto* tr = dynamic_cast<TrainableFlow*>(&flow);
    Vec p = tr->get_params();
    Xoshiro256 rng(seed);
    for (double& v : p) v += scale * normal_quantile(rng.uniform_open());
    tr->set_params(p);
}

bool crit_flow_suite(std::string& detail) {
    const InputLaw square{UniformBox{{-1.0, -1.0}, {1.0, 1.0}}};
    struct Variant {
        std::string name;
        std::unique_ptr<Flow> flow;
        bool box_domain;  // sample points from the open unit square
    };
    std::vector<Variant> variants;
    variants.push_back({"analytic_cdf", make_analytic_cdf_flow(square), true});
    variants.push_back({"affine", make_affine_flow({1.5, 0.5}, {0.2, -0.3}), false});
    variants.push_back({"atanh", atanh_premap({-1.0, -1.0}, {1.0, 1.0}), true});
    {
        auto coupling = make_coupling_stack(2, 4, 8, 1, 2.0, 33);
        perturb_params(*coupling, 0.3, 91);
        variants.push_back({"coupling", std::move(coupling), false});
    }
    {
        auto spline = make_spline_flow(8, 4.0);
        perturb_params(*spline, 0.3, 92);
        variants.push_back({"spline", std::move(spline), false});
    }
    {
        std::vector<std::unique_ptr<Flow>> parts;
        parts.push_back(atanh_premap({-1.0, -1.0}, {1.0, 1.0}));
        auto coupling = make_coupling_stack(2, 4, 8, 1, 2.0, 34);
        perturb_params(*coupling, 0.3, 93);
        parts.push_back(std::move(coupling));
        variants.push_back({"composite", make_composite(std::move(parts)), true});
    }

    double worst_rt = 0.0, worst_ld = 0.0;
    std::string worst_name;
    Xoshiro256 rng(555);
    for (const Variant& v : variants) {
        for (int i = 0; i < 100; ++i) {
            Vec x(static_cast<std::size_t>(v.flow->dim()));
            for (double& c : x) {
                c = v.box_domain ? 1.96 * (rng.uniform_open() - 0.5)
                                 : normal_quantile(rng.uniform_open());
            }
            double log_det = 0.0;
            const Vec y = v.flow->forward(x, &log_det);
            const Vec back = v.flow->inverse(y);
            for (std::size_t c = 0; c < x.size(); ++c) {
                if (std::abs(back[c] - x[c]) > worst_rt) {
                    worst_rt = std::abs(back[c] - x[c]);
                    worst_name = v.name;
                }
            }
            worst_ld = std::max(worst_ld,
                                std::abs(log_det - fd_log_abs_det(*v.flow, x, 1e-5)));
        }
    }

    // Trained 1D spline pipelines must gaussianize both latent laws.
    const TheoreticalExample ex = theoretical_example();
    double ks_worst = 0.0;
    for (const InputLaw* law : {&ex.latent_law_hf, &ex.latent_law_lf}) {
        const SampleBatch batch = sample(*law, 2000, 83);
        std::vector<std::unique_ptr<Flow>> parts;
        parts.push_back(make_standardizer(batch.data));
        parts.push_back(make_spline_flow(8, 4.0));
        CompositeFlow flow(std::move(parts));
        TrainConfig tc;
        tc.learning_rate = 0.1;
        tc.scheduler_factor = 0.99;
        tc.epochs = 300;
        tc.seed = 7;
        fit(flow, batch, tc);
        ks_worst = std::max(
            ks_worst, ks_vs_standard_normal(forward_rows(flow, batch.data).col_vec(0)));
    }

    detail = fmt("round-trip %.1e (<1e-6, worst %s), log-det fd error %.1e (<1e-4), "
                 "trained KS %.3f (<0.05)",
                 worst_rt, worst_name.c_str(), worst_ld, ks_worst);
    return worst_rt < 1e-6 && worst_ld < 1e-4 && ks_worst < 0.05;
}

// ---- criterion 6: network input gradients against central differences ----

bool crit_net_gradients(std::string& detail) {
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        const int in_dim = 1 + s % 4;
        std::vector<int> shape{in_dim, 3 + s % 6};
        if (s % 2 == 1) shape.push_back(2 + s % 5);
        shape.push_back(1);
        const DenseNet net = make_dense_net(shape, Activation::Tanh,
                                            1000 + static_cast<std::uint64_t>(s));

        Xoshiro256 rng(555 + static_cast<std::uint64_t>(s));
        Vec x(static_cast<std::size_t>(in_dim));
        for (double& c : x) c = 2.0 * rng.uniform01() - 1.0;

        const Vec g = net.grad_input(x);
        const double h = 1e-5;
        double num = 0.0, den = 0.0;
        for (int c = 0; c < in_dim; ++c) {
            Vec xp = x, xm = x;
            xp[static_cast<std::size_t>(c)] += h;
            xm[static_cast<std::size_t>(c)] -= h;
            const double fd = (net.forward(xp)[0] - net.forward(xm)[0]) / (2.0 * h);
            num += (g[static_cast<std::size_t>(c)] - fd) *
                   (g[static_cast<std::size_t>(c)] - fd);
            den += fd * fd;
        }
        worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-10));
    }
    detail = fmt("worst relative gradient error %.1e over 100 nets (<1e-5)", worst);
    return worst < 1e-5;
}

// ---- criterion 7: reaction-diffusion solver and the subspace-bridge gain ----

bool crit_reaction_diffusion(std::string& detail) {
    // (a) zero diffusion: every cell is an independent ODE; a tenfold time
    // refinement must agree to 1e-6.
    RDConfig ode;
    ode.m = 8;
    ode.steps = 400;
    ode.d_u = 0.0;
    ode.d_v = 0.0;
    const FieldPair ic = rd_initial_condition(8, 5);
    const FieldPair a = rd_solve(ode, ic);
    ode.steps = 4000;
    const FieldPair b = rd_solve(ode, ic);
    double ode_err = 0.0;
    for (std::size_t i = 0; i < a.u.a.size(); ++i) {
        ode_err = std::max(ode_err, std::abs(a.u.a[i] - b.u.a[i]));
        ode_err = std::max(ode_err, std::abs(a.v.a[i] - b.v.a[i]));
    }

    // (b) with reactions off the spatial means are conserved step by step.
    RDConfig pure;
    pure.m = 16;
    pure.steps = 1;
    pure.t_final = 0.01;
    pure.d_u = 5e-3;
    pure.d_v = 5e-3;
    pure.zero_reactions = true;
    FieldPair state = rd_initial_condition(16, 6);
    double mass_err = 0.0;
    for (int step = 0; step < 50; ++step) {
        const double mu = mean(state.u.a), mv = mean(state.v.a);
        state = rd_solve(pure, state);
        mass_err = std::max(mass_err, std::abs(mean(state.u.a) - mu));
        mass_err = std::max(mass_err, std::abs(mean(state.v.a) - mv));
    }

    // (c) stability guards: both benchmark grids admit the largest diffusion
    // the input laws can draw; a coarser time step is rejected.
    bool guards = true;
    try {
        RDConfig hf;
        hf.d_u = 6e-3;
        hf.d_v = 6e-3;
        validate_rd_config(hf);
        RDConfig lf;
        lf.m = 16;
        lf.steps = 100;
        lf.d_u = 6e-3;
        lf.d_v = 6e-3;
        validate_rd_config(lf);
    } catch (const std::exception&) {
        guards = false;
    }
    try {
        RDConfig bad;
        bad.d_u = 6e-3;
        bad.steps = 40;
        validate_rd_config(bad);
        guards = false;
    } catch (const std::invalid_argument&) {
    }

    // (d) routing the coarse model through the learned bridge must lift the
    // pilot correlation in the median over 20 repetitions.
    RunConfig cfg;
    cfg.benchmark = "reaction_diffusion";
    cfg.methods = {"mfmc", "mfmc_ae"};
    cfg.budget = 100.0;
    cfg.pilot_n = 100;
    cfg.repetitions = 20;
    cfg.seed = 42;
    cfg.model_as_encoder = true;
    cfg.surrogate_search = SearchSpace{2, 2, 12, 12, 1e-4, 1e-2, 0.999, 0.9999, 1, 0};
    cfg.surrogate_epochs = 1500;
    cfg.latent_flow_train.learning_rate = 0.05;
    cfg.latent_flow_train.scheduler_factor = 0.995;
    cfg.latent_flow_train.epochs = 200;

    const ExperimentSummary s = run_experiment(cfg);
    const MethodSummary& mf = method_of(s, "mfmc");
    const MethodSummary& ae = method_of(s, "mfmc_ae");
    const double med_plain = median(mf.correlations);
    const double med_ae = median(ae.correlations);

    detail = fmt("ode refinement %.1e (<1e-6), mass drift %.1e (<1e-12), guards %s, "
                 "median pilot rho %.4f -> %.4f (must rise)",
                 ode_err, mass_err, guards ? "ok" : "BROKEN", med_plain, med_ae);
    return ode_err < 1e-6 && mass_err < 1e-12 && guards && med_ae > med_plain &&
           mf.completed == 20 && ae.completed == 20;
}

// ---- criterion 8: allocation arithmetic ----

bool crit_allocation(std::string& detail) {
    const double rho = 5.0 / std::sqrt(34.0);
    const AllocationPlan plan = optimal_allocation(300.0, 0.01, rho);
    const bool gamma_ok = std::abs(plan.gamma - 50.0 / 3.0) < 1e-12 && !plan.gamma_capped;

    const AllocationPlan flat = optimal_allocation(300.0, 0.01, 0.0);
    const bool degenerate_ok = flat.n_hf == 300 && flat.n_lf == 300;

    double lhs = 0.0, rhs = 0.0;
    const bool benefit = mfmc_beneficial(0.86, 0.01, &lhs, &rhs);

    detail = fmt("gamma %.12f (50/3), rho=0 -> %lld/%lld, benefit(0.86, 0.01) %s "
                 "(%.4f > %.4f)",
                 plan.gamma, flat.n_hf, flat.n_lf, benefit ? "true" : "false", lhs, rhs);
    return gamma_ok && degenerate_ok && benefit;
}

// ---- criterion 9: byte-identical outputs for equal seeds ----

bool crit_reproducibility(std::string& detail) {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "mfuq_acceptance_repro";
    fs::remove_all(base);

    RunConfig cfg;
    cfg.benchmark = "analytic";
    cfg.methods = {"mc", "mfmc", "mfmc_as", "mfmc_ae"};
    cfg.pilot_n = 40;
    cfg.budget = 120.0;
    cfg.repetitions = 2;
    cfg.seed = 77;
    cfg.model_as_encoder = true;
    cfg.surrogate_search = SearchSpace{1, 1, 8, 8, 1e-4, 1e-2, 0.999, 0.9999, 1, 0};
    cfg.surrogate_epochs = 300;
    cfg.flow_train.learning_rate = 0.05;
    cfg.flow_train.scheduler_factor = 0.99;
    cfg.flow_train.epochs = 40;
    cfg.coupling_layers = 2;
    cfg.coupling_width = 4;
    cfg.latent_flow_train.learning_rate = 0.05;
    cfg.latent_flow_train.epochs = 60;

    cfg.out_dir = (base / "a").string();
    run_experiment(cfg);
    cfg.out_dir = (base / "b").string();
    run_experiment(cfg);

    int files = 0;
    bool identical = true;
    std::string first_diff;
    for (const auto& entry : fs::directory_iterator(base / "a")) {
        ++files;
        const auto name = entry.path().filename();
        if (read_file(entry.path()) != read_file(base / "b" / name)) {
            identical = false;
            if (first_diff.empty()) first_diff = name.string();
        }
    }
    fs::remove_all(base);

    detail = fmt("%d files compared, %s", files,
                 identical ? "all byte-identical" : ("differs: " + first_diff).c_str());
    return identical && files == 13;
}

struct Criterion {
    int id;
    const char* what;
    std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "correlation ladder, closed forms at 1e6 samples", crit_correlation_ladder},
        {2, "gradient outer-product matrices by Monte Carlo", crit_c_matrices},
        {3, "estimator unbiasedness on the exponential pair", crit_unbiasedness},
        {4, "variance ordering, learned and ideal settings", crit_variance_ordering},
        {5, "flow round-trips, log-dets, gaussianization", crit_flow_suite},
        {6, "network input gradients vs central differences", crit_net_gradients},
        {7, "reaction-diffusion solver and bridge gain", crit_reaction_diffusion},
        {8, "allocation arithmetic", crit_allocation},
        {9, "byte-identical outputs for equal seeds", crit_reproducibility},
    };

    const int only = argc > 1 ? std::atoi(argv[1]) : 0;
    int failures = 0, ran = 0;
    for (const Criterion& c : criteria) {
        if (only != 0 && c.id != only) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d %s (%6.1fs)  %s: %s\n", c.id, ok ? "PASS" : "FAIL", secs,
                    c.what, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    std::printf("acceptance: %d/%d criteria passed\n", ran - failures, ran);
    return failures == 0 ? 0 : 1;
}
