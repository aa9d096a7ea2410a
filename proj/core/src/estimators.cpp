#include "mfuq/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>
#include <variant>

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

int checked_int(long long n, const char* what) {
    if (n > std::numeric_limits<int>::max()) {
        throw std::invalid_argument(std::string(what) + ": count too large");
    }
    return static_cast<int>(n);
}

Matrix column_matrix(const Vec& v) {
    Matrix m(static_cast<int>(v.size()), 1);
    for (int i = 0; i < m.rows; ++i) m(i, 0) = v[i];
    return m;
}

Matrix transform_rows(const Matrix& xs, const std::function<Vec(const Vec&)>& f, int out_dim) {
    Matrix out(xs.rows, out_dim);
    for (int i = 0; i < xs.rows; ++i) {
        Vec y = f(xs.row_vec(i));
        if (static_cast<int>(y.size()) != out_dim) {
            throw std::invalid_argument("transform returned a vector of wrong dimension");
        }
        for (int j = 0; j < out_dim; ++j) out(i, j) = y[j];
    }
    return out;
}

struct SupportBox {
    Vec lo, hi;
};

// Exact support box of a law, slightly widened so boundary samples stay in
// the open box an atanh premap needs. Unbounded laws yield nullopt.
std::optional<SupportBox> support_box(const InputLaw& law) {
    auto widen = [](SupportBox b) {
        for (std::size_t i = 0; i < b.lo.size(); ++i) {
            const double pad = 1e-6 * std::max(b.hi[i] - b.lo[i], 1.0);
            b.lo[i] -= pad;
            b.hi[i] += pad;
        }
        return b;
    };
    using R = std::optional<SupportBox>;
    return std::visit(
        Overload{
            [&](const UniformBox& u) -> R { return widen({u.lo, u.hi}); },
            [&](const StdGaussian&) -> R { return std::nullopt; },
            [&](const Triangle2D& t) -> R {
                SupportBox b{Vec(2), Vec(2)};
                for (int j = 0; j < 2; ++j) {
                    b.lo[j] = std::min({t.v1[j], t.v2[j], t.v3[j]});
                    b.hi[j] = std::max({t.v1[j], t.v2[j], t.v3[j]});
                }
                return widen(b);
            },
            [&](const Triangular1D& t) -> R { return widen({{t.a}, {t.b}}); },
            [&](const Trapezoidal1D& t) -> R { return widen({{t.a}, {t.d}}); },
            [&](const ProductLaw& p) -> R {
                SupportBox b;
                for (const auto& part : p.parts) {
                    auto sub = support_box(part);
                    if (!sub) return std::nullopt;
                    b.lo.insert(b.lo.end(), sub->lo.begin(), sub->lo.end());
                    b.hi.insert(b.hi.end(), sub->hi.begin(), sub->hi.end());
                }
                return b;
            },
            [&](const EmpiricalLaw& e) -> R {
                SupportBox b{Vec(e.sample.cols), Vec(e.sample.cols)};
                for (int j = 0; j < e.sample.cols; ++j) {
                    Vec col = e.sample.col_vec(j);
                    b.lo[j] = *std::min_element(col.begin(), col.end());
                    b.hi[j] = *std::max_element(col.begin(), col.end());
                }
                return widen(b);
            },
        },
        law.v);
}

// Default learned-gaussianizer shapes: standardize-then-spline in 1D, squeeze
// a known bounded support onto R^d (or standardize) followed by couplings
// otherwise. The trainable part is always last, as fit() requires.
std::unique_ptr<Flow> make_learned_flow(const std::optional<SupportBox>& box, const Matrix& data,
                                        const PipelineConfig& cfg, std::uint64_t seed) {
    std::vector<std::unique_ptr<Flow>> parts;
    if (data.cols == 1) {
        parts.push_back(make_standardizer(data));
        parts.push_back(make_spline_flow(cfg.spline_bins, cfg.spline_half_width));
    } else {
        if (box) {
            parts.push_back(atanh_premap(box->lo, box->hi));
        } else {
            parts.push_back(make_standardizer(data));
        }
        parts.push_back(make_coupling_stack(data.cols, cfg.coupling_layers, cfg.coupling_width,
                                            cfg.coupling_depth, 2.0, seed));
    }
    return make_composite(std::move(parts));
}

nlohmann::json flow_fit_json(const FlowFitReport& r) {
    double ks_max = 0.0;
    for (double k : r.ks_per_coordinate) ks_max = std::max(ks_max, k);
    return {{"initial_nll", r.initial_nll}, {"final_nll", r.final_nll}, {"epochs", r.epochs},
            {"ks_max", ks_max},             {"n_train", r.n_train},     {"n_val", r.n_val}};
}

// Gradient of the modified model Q o T^-1 in normal coordinates, built per
// the configured mode. Surrogate nets consume eta directly; the analytic
// route chains the model gradient with the flow's diagonal inverse Jacobian.
GradientSource make_gradient_source(const ModelSpec& m, const std::shared_ptr<const Flow>& t,
                                    const Matrix& eta_pilot, const Vec& q_pilot,
                                    const PipelineConfig& cfg, std::uint64_t surrogate_seed,
                                    nlohmann::json& prov, const char* prov_key) {
    switch (cfg.gradient_mode) {
        case GradientMode::Analytic: {
            if (!m.gradient) {
                throw std::invalid_argument(m.label +
                                            ": analytic gradient mode needs a model gradient");
            }
            inverse_diag_jacobian(*t, Vec(t->dim(), 0.0));  // fail fast on unsupported flows
            auto grad = m.gradient;
            return AnalyticGradient{[t, grad](const Vec& eta) {
                const Vec x = t->inverse(eta);
                Vec g = grad(x);
                const Vec dj = inverse_diag_jacobian(*t, eta);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] *= dj[i];
                return g;
            }};
        }
        case GradientMode::Surrogate: {
            SearchSpace space = cfg.surrogate_search;
            space.seed = surrogate_seed;
            FitResult fr =
                fit_net_with_search(eta_pilot, column_matrix(q_pilot), space, cfg.surrogate_epochs);
            prov[prov_key] = {{"validation_loss", fr.report.final_validation_loss},
                              {"train_loss", fr.report.final_train_loss}};
            return SurrogateGradient{std::move(fr.net)};
        }
        case GradientMode::FiniteDifference: {
            auto eval = m.evaluate;
            return FiniteDifferenceGradient{
                [t, eval](const Vec& eta) { return eval(t->inverse(eta)); }, cfg.fd_step};
        }
    }
    throw std::logic_error("unreachable gradient mode");
}

void clamp_latent(Vec& v, const LatentBox& box, const std::shared_ptr<ClampLog>& log) {
    long long hit = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < box.lo[i]) {
            v[i] = box.lo[i];
            ++hit;
        } else if (v[i] > box.hi[i]) {
            v[i] = box.hi[i];
            ++hit;
        }
    }
    if (hit > 0 && log) {
        log->samples += 1;
        log->coordinates += hit;
    }
}

const char* gradient_mode_name(GradientMode m) {
    switch (m) {
        case GradientMode::Analytic: return "analytic";
        case GradientMode::Surrogate: return "surrogate";
        case GradientMode::FiniteDifference: return "finite_difference";
    }
    return "?";
}

const char* flow_mode_name(FlowMode m) {
    return m == FlowMode::Analytic ? "analytic" : "learned";
}

}  // namespace

void validate_model(const ModelSpec& m) {
    if (m.d < 1) throw std::invalid_argument(m.label + ": dimension must be positive");
    if (!(m.cost > 0.0)) throw std::invalid_argument(m.label + ": cost ratio must be positive");
    if (!m.evaluate) throw std::invalid_argument(m.label + ": missing evaluate");
    validate_law(m.law);
    if (law_dim(m.law) != m.d) {
        throw std::invalid_argument(m.label + ": law dimension disagrees with d");
    }
}

Vec evaluate_rows(const ModelSpec& m, const Matrix& xs) {
    if (xs.cols != m.d) {
        throw std::invalid_argument(m.label + ": input rows have wrong dimension");
    }
    Vec out(static_cast<std::size_t>(xs.rows));
    for (int i = 0; i < xs.rows; ++i) {
        double v;
        try {
            v = m.evaluate(xs.row_vec(i));
        } catch (const std::exception& e) {
            throw std::runtime_error(m.label + ": evaluation failed at row " + std::to_string(i) +
                                     ": " + e.what());
        }
        if (!std::isfinite(v)) {
            throw std::runtime_error(m.label + ": non-finite value at row " + std::to_string(i));
        }
        out[static_cast<std::size_t>(i)] = v;
    }
    return out;
}

ModelSpec reparametrize(const ModelSpec& m, const InputLaw& new_law,
                        std::function<Vec(const Vec&)> transform, const std::string& label) {
    if (!transform) throw std::invalid_argument("reparametrize: missing transform");
    validate_law(new_law);
    ModelSpec out;
    out.label = label;
    out.d = law_dim(new_law);
    out.cost = m.cost;
    out.law = new_law;
    auto eval = m.evaluate;
    out.evaluate = [eval, transform](const Vec& x) { return eval(transform(x)); };
    return out;
}

AllocationPlan optimal_allocation(double budget, double w, double rho) {
    if (!(budget >= 1.0)) throw std::invalid_argument("optimal_allocation: budget must be >= 1");
    if (!(w > 0.0)) throw std::invalid_argument("optimal_allocation: cost ratio must be positive");

    constexpr double gamma_max = 1e4;
    AllocationPlan plan;
    plan.budget = budget;
    plan.rho_pilot = rho;
    const double rho2 = rho * rho;
    if (std::abs(rho) >= 1.0) {
        plan.gamma = gamma_max;
        plan.gamma_capped = true;
    } else {
        plan.gamma = std::sqrt(rho2 / (w * (1.0 - rho2)));
    }

    plan.n_hf = std::llround(budget / (1.0 + w * plan.gamma));
    plan.n_hf = std::max<long long>(plan.n_hf, 1);
    plan.n_lf = std::llround(plan.gamma * static_cast<double>(plan.n_hf));
    plan.n_lf = std::max(plan.n_lf, plan.n_hf);

    // Rounding can overshoot the budget; shrink N^LF toward the shared count
    // until N^HF + w N^LF <= B + w. At N^LF == N^HF the correction term is
    // identically zero, so only the high-fidelity cost counts there.
    auto cost = [w](long long a, long long b) {
        return static_cast<double>(a) + w * static_cast<double>(b);
    };
    if (plan.n_lf > plan.n_hf && cost(plan.n_hf, plan.n_lf) > budget + w) {
        const double room = (budget + w - static_cast<double>(plan.n_hf)) / w;
        plan.n_lf = std::max(static_cast<long long>(std::floor(room)), plan.n_hf);
    }
    if (plan.n_lf == plan.n_hf) {
        while (plan.n_hf > 1 && static_cast<double>(plan.n_hf) > budget + 0.5) {
            --plan.n_hf;
            plan.n_lf = plan.n_hf;
        }
    }
    validate_plan(plan, w);
    return plan;
}

void validate_plan(const AllocationPlan& plan, double w) {
    if (!(w > 0.0)) throw std::invalid_argument("plan: cost ratio must be positive");
    if (plan.n_hf < 1) throw std::invalid_argument("plan: N^HF must be at least 1");
    if (plan.n_lf < plan.n_hf) throw std::invalid_argument("plan: N^LF must be at least N^HF");
    if (plan.n_lf > plan.n_hf) {
        const double cost = static_cast<double>(plan.n_hf) + w * static_cast<double>(plan.n_lf);
        if (cost > plan.budget + w) throw std::invalid_argument("plan: cost exceeds budget");
    } else if (static_cast<double>(plan.n_hf) > plan.budget + 0.5) {
        throw std::invalid_argument("plan: cost exceeds budget");
    }
}

double optimal_beta(const Vec& pilot_hf, const Vec& pilot_lf) {
    if (pilot_hf.size() != pilot_lf.size() || pilot_hf.size() < 2) {
        throw std::invalid_argument("optimal_beta: need paired samples of length >= 2");
    }
    const double var_lf = sample_variance(pilot_lf);
    if (!(var_lf > 0.0)) {
        throw std::domain_error("optimal_beta: degenerate data, zero low-fidelity variance");
    }
    return sample_covariance(pilot_hf, pilot_lf) / var_lf;
}

double variance_reduction_factor(double rho, double w) {
    if (std::abs(rho) > 1.0) throw std::invalid_argument("variance_reduction_factor: |rho| > 1");
    if (!(w > 0.0) || w > 1.0) {
        throw std::invalid_argument("variance_reduction_factor: w outside (0, 1]");
    }
    const double rho2 = rho * rho;
    return std::sqrt(1.0 - rho2) + std::sqrt(w * rho2);
}

bool mfmc_beneficial(double rho, double w, double* lhs, double* rhs) {
    if (!(w > 0.0)) throw std::invalid_argument("mfmc_beneficial: cost ratio must be positive");
    const double left = std::abs(rho);
    const double right = 4.0 * w / ((1.0 + w) * (1.0 + w));
    if (lhs) *lhs = left;
    if (rhs) *rhs = right;
    return left > right;
}

double chebyshev_halfwidth(double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("chebyshev_halfwidth: sigma must be >= 0");
    return std::sqrt(10.0) * sigma;
}

nlohmann::json report_to_json(const EstimatorReport& r) {
    return {{"method", r.method},
            {"qoi", r.qoi},
            {"estimate", r.estimate},
            {"rho", r.rho},
            {"beta", r.beta},
            {"n_hf", r.n_hf},
            {"n_lf", r.n_lf},
            {"variance_proxy", r.variance_proxy},
            {"halfwidth", r.halfwidth},
            {"seed", r.seed},
            {"provenance", r.provenance}};
}

std::string report_csv_header() { return "method,qoi,estimate,rho,beta,n_hf,n_lf,halfwidth,seed"; }

std::string report_csv_row(const EstimatorReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%lld,%lld,%.17g,%llu",
                  r.method.c_str(), r.qoi.c_str(), r.estimate, r.rho, r.beta, r.n_hf, r.n_lf,
                  r.halfwidth, static_cast<unsigned long long>(r.seed));
    return buf;
}

EstimatorReport mc_estimate(const ModelSpec& m, long long n, std::uint64_t seed) {
    validate_model(m);
    if (n < 1) throw std::invalid_argument("mc_estimate: n must be at least 1");
    const SampleBatch batch = sample(m.law, checked_int(n, "mc_estimate"), seed);
    const Vec q = evaluate_rows(m, batch.data);

    EstimatorReport r;
    r.method = "mc";
    r.qoi = m.label;
    r.estimate = mean(q);
    r.n_hf = n;
    r.n_lf = 0;
    r.variance_proxy = n >= 2 ? sample_variance(q) / static_cast<double>(n) : 0.0;
    r.halfwidth = chebyshev_halfwidth(std::sqrt(r.variance_proxy));
    r.seed = seed;
    r.provenance = {{"n", n}};
    return r;
}

EstimatorReport mfmc_combine(const Vec& q_hf, const Vec& q_lf, double beta, double w,
                             std::uint64_t seed) {
    const auto m1 = static_cast<long long>(q_hf.size());
    const auto m2 = static_cast<long long>(q_lf.size());
    if (m1 < 1) throw std::invalid_argument("mfmc_combine: empty shared sample");
    if (m2 < m1) throw std::invalid_argument("mfmc_combine: LF sample smaller than shared sample");

    // Both low-fidelity means run over the leading entries in the same index
    // order, so with m2 == m1 the correction cancels exactly in floating
    // point and the estimate equals the plain high-fidelity mean.
    double sum_hf = 0.0;
    for (long long i = 0; i < m1; ++i) sum_hf += q_hf[static_cast<std::size_t>(i)];
    double sum_lf_shared = 0.0;
    for (long long i = 0; i < m1; ++i) sum_lf_shared += q_lf[static_cast<std::size_t>(i)];
    double sum_lf_all = 0.0;
    for (long long i = 0; i < m2; ++i) sum_lf_all += q_lf[static_cast<std::size_t>(i)];

    const double mean_hf = sum_hf / static_cast<double>(m1);
    const double mean_lf_shared = sum_lf_shared / static_cast<double>(m1);
    const double mean_lf_all = sum_lf_all / static_cast<double>(m2);

    EstimatorReport r;
    r.method = "mfmc";
    r.estimate = mean_hf - beta * (mean_lf_shared - mean_lf_all);
    r.beta = beta;
    r.n_hf = m1;
    r.n_lf = m2;
    r.seed = seed;

    if (m1 >= 2) {
        const Vec lf_shared(q_lf.begin(), q_lf.begin() + static_cast<std::ptrdiff_t>(m1));
        const double var_hf = sample_variance(q_hf);
        const double var_lf = sample_variance(lf_shared);
        const double cov = sample_covariance(q_hf, lf_shared);
        r.rho = var_hf > 0.0 && var_lf > 0.0 ? cov / std::sqrt(var_hf * var_lf) : 0.0;
        // Var of the estimator for fixed beta, from shared-sample statistics:
        // sigma_1^2/m1 + (beta^2 sigma_2^2 - 2 beta cov)(1/m1 - 1/m2).
        const double inv_diff = 1.0 / static_cast<double>(m1) - 1.0 / static_cast<double>(m2);
        const double proxy =
            var_hf / static_cast<double>(m1) + (beta * beta * var_lf - 2.0 * beta * cov) * inv_diff;
        r.variance_proxy = std::max(proxy, 0.0);
    }
    r.halfwidth = chebyshev_halfwidth(std::sqrt(r.variance_proxy));
    r.provenance = {{"w", w}, {"shared_n", m1}};
    return r;
}

EstimatorReport mfmc_estimate(const ModelSpec& hf, const ModelSpec& lf_on_hf,
                              const AllocationPlan& plan, std::uint64_t seed) {
    validate_model(hf);
    validate_model(lf_on_hf);
    validate_plan(plan, lf_on_hf.cost);
    if (lf_on_hf.d != hf.d) {
        throw std::invalid_argument("mfmc_estimate: models must share the input space");
    }

    const SampleBatch batch = sample(hf.law, checked_int(plan.n_lf, "mfmc_estimate"),
                                     derive_seed(seed, 0));
    const Vec q_lf = evaluate_rows(lf_on_hf, batch.data);
    Matrix head(checked_int(plan.n_hf, "mfmc_estimate"), batch.data.cols);
    for (int i = 0; i < head.rows; ++i) {
        for (int j = 0; j < head.cols; ++j) head(i, j) = batch.data(i, j);
    }
    const Vec q_hf = evaluate_rows(hf, head);

    EstimatorReport r = mfmc_combine(q_hf, q_lf, plan.beta, lf_on_hf.cost, seed);
    r.qoi = hf.label;
    r.provenance["plan"] = {{"n_hf", plan.n_hf},   {"n_lf", plan.n_lf},
                            {"gamma", plan.gamma}, {"gamma_capped", plan.gamma_capped},
                            {"budget", plan.budget}, {"rho_pilot", plan.rho_pilot}};
    return r;
}

Vec inverse_diag_jacobian(const Flow& flow, const Vec& eta) {
    if (static_cast<int>(eta.size()) != flow.dim()) {
        throw std::invalid_argument("inverse_diag_jacobian: dimension mismatch");
    }
    const std::string kind = flow.kind();
    if (kind == "composite") {
        const auto& comp = static_cast<const CompositeFlow&>(flow);
        Vec out(eta.size(), 1.0);
        Vec cur = eta;
        for (int k = comp.part_count() - 1; k >= 0; --k) {
            const Vec dk = inverse_diag_jacobian(comp.part(k), cur);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= dk[i];
            cur = comp.part(k).inverse(cur);
        }
        return out;
    }
    if (kind == "analytic_cdf") {
        const auto& acf = static_cast<const AnalyticCdfFlow&>(flow);
        const Vec x = flow.inverse(eta);
        Vec out(eta.size());
        const double inv_sqrt_two_pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < eta.size(); ++i) {
            const double f = pdf_1d(acf.components()[i], x[i]);
            if (!(f > 0.0)) {
                throw std::domain_error("inverse_diag_jacobian: zero density at mapped point");
            }
            out[i] = inv_sqrt_two_pi * std::exp(-0.5 * eta[i] * eta[i]) / f;
        }
        return out;
    }
    if (kind == "affine") {
        const auto& aff = static_cast<const AffineFlow&>(flow);
        Vec out(eta.size());
        for (std::size_t i = 0; i < eta.size(); ++i) out[i] = 1.0 / aff.scale()[i];
        return out;
    }
    if (kind == "atanh_premap") {
        const auto& pre = static_cast<const AtanhPremap&>(flow);
        Vec out(eta.size());
        for (std::size_t i = 0; i < eta.size(); ++i) {
            const double th = std::tanh(eta[i]);
            out[i] = 0.5 * (pre.hi()[i] - pre.lo()[i]) * (1.0 - th * th);
        }
        return out;
    }
    throw std::invalid_argument("inverse_diag_jacobian: no closed form for '" + kind + "' flows");
}

ModelSpec build_lf_as(const ModelSpec& lf, const InputLaw& hf_law,
                      std::shared_ptr<const Flow> t_hf, std::shared_ptr<const Flow> t_lf,
                      const ActiveSubspace& as_hf, const ActiveSubspace& as_lf,
                      std::optional<LatentBox> lf_box, std::shared_ptr<ClampLog> clamp_log) {
    validate_model(lf);
    if (!t_hf || !t_lf) throw std::invalid_argument("build_lf_as: missing flow");
    const int d_hf = law_dim(hf_law);
    if (t_hf->dim() != d_hf) throw std::invalid_argument("build_lf_as: HF flow dimension mismatch");
    if (t_lf->dim() != lf.d) throw std::invalid_argument("build_lf_as: LF flow dimension mismatch");
    if (as_hf.w.rows != d_hf || as_lf.w.rows != lf.d || as_hf.w.cols != as_lf.w.cols) {
        throw std::invalid_argument("build_lf_as: subspace shapes disagree");
    }
    if (lf_box && static_cast<int>(lf_box->lo.size()) != lf.d) {
        throw std::invalid_argument("build_lf_as: clamp box dimension mismatch");
    }

    ModelSpec out;
    out.label = lf.label + "_as";
    out.d = d_hf;
    out.cost = lf.cost;
    out.law = hf_law;
    auto eval = lf.evaluate;
    const std::string label = out.label;
    out.evaluate = [eval, t_hf, t_lf, as_hf, as_lf, lf_box, clamp_log, label](const Vec& xi) {
        const Vec eta_hf = t_hf->forward(xi);
        const Vec z = as_project(as_hf, eta_hf);
        Vec eta_lf = as_lift(as_lf, z);
        if (lf_box) clamp_latent(eta_lf, *lf_box, clamp_log);
        Vec x_lf;
        try {
            x_lf = t_lf->inverse(eta_lf);
        } catch (const std::exception& e) {
            throw std::runtime_error(label + ": mapped input outside the inverse-flow domain: " +
                                     e.what());
        }
        return eval(x_lf);
    };
    return out;
}

ModelSpec build_lf_ae(const ModelSpec& lf, const InputLaw& hf_law, const AePair& aes,
                      std::shared_ptr<const Flow> s_hf, std::shared_ptr<const Flow> s_lf,
                      const LatentAlignment& alignment, std::optional<LatentBox> lf_box,
                      std::shared_ptr<ClampLog> clamp_log) {
    validate_model(lf);
    if (!s_hf || !s_lf) throw std::invalid_argument("build_lf_ae: missing latent flow");
    const int d_hf = law_dim(hf_law);
    const int r = s_hf->dim();
    if (aes.hf.encoder.input_dim() != d_hf) {
        throw std::invalid_argument("build_lf_ae: HF encoder dimension mismatch");
    }
    if (aes.hf.encoder.output_dim() != r || s_lf->dim() != r ||
        static_cast<int>(alignment.perm.size()) != r ||
        static_cast<int>(alignment.sign.size()) != r) {
        throw std::invalid_argument("build_lf_ae: latent dimensions disagree");
    }
    if (aes.model_as_encoder) {
        if (r != 1) throw std::invalid_argument("build_lf_ae: model-as-encoder needs r == 1");
    } else if (aes.lf.decoder.input_dim() != r || aes.lf.decoder.output_dim() != lf.d) {
        throw std::invalid_argument("build_lf_ae: LF decoder dimension mismatch");
    }
    if (lf_box && static_cast<int>(lf_box->lo.size()) != r) {
        throw std::invalid_argument("build_lf_ae: clamp box dimension mismatch");
    }

    ModelSpec out;
    out.label = lf.label + "_ae";
    out.d = d_hf;
    out.cost = lf.cost;
    out.law = hf_law;
    auto eval = lf.evaluate;
    const std::string label = out.label;
    out.evaluate = [eval, aes, s_hf, s_lf, alignment, lf_box, clamp_log, label](const Vec& xi) {
        const Vec x_lat = aes.hf.encoder.forward(xi);
        Vec z = apply_alignment(alignment, s_hf->forward(x_lat));
        if (lf_box) clamp_latent(z, *lf_box, clamp_log);
        Vec lf_lat;
        try {
            lf_lat = s_lf->inverse(z);
        } catch (const std::exception& e) {
            throw std::runtime_error(label + ": mapped input outside the inverse-flow domain: " +
                                     e.what());
        }
        // With the model standing in for the encoder, the low-fidelity latent
        // is the low-fidelity output itself and the decoder is elided.
        if (aes.model_as_encoder) return lf_lat[0];
        return eval(aes.lf.decoder.forward(lf_lat));
    };
    return out;
}

namespace {

void check_pipeline_config(const char* name, const ModelSpec& hf, const ModelSpec& lf,
                           const PipelineConfig& cfg) {
    validate_model(hf);
    validate_model(lf);
    if (cfg.pilot_n < 2) throw std::invalid_argument(std::string(name) + ": pilot_n must be >= 2");
    if (!(cfg.budget >= 1.0)) {
        throw std::invalid_argument(std::string(name) + ": budget must be >= 1");
    }
    if (cfg.r < 1 || cfg.r > std::min(hf.d, lf.d)) {
        throw std::invalid_argument(std::string(name) + ": r out of range");
    }
    if (!cfg.hf_to_lf && lf.d != hf.d) {
        throw std::invalid_argument(std::string(name) +
                                    ": dissimilar input spaces need an hf_to_lf transform");
    }
}

// Input gaussianizer for one fidelity: injected oracle, analytic CDF map, or
// a learned flow fitted to the pilot. Learned fits record their report and
// leave the codomain box for downstream clamping.
std::shared_ptr<const Flow> build_input_flow(const ModelSpec& m, const Matrix& pilot_inputs,
                                             const PipelineConfig& cfg,
                                             std::shared_ptr<const Flow> override_flow,
                                             std::uint64_t seed, nlohmann::json& prov,
                                             const char* prov_key,
                                             std::optional<LatentBox>* box) {
    if (override_flow) {
        if (override_flow->dim() != m.d) {
            throw std::invalid_argument(m.label + ": injected flow dimension mismatch");
        }
        return override_flow;
    }
    if (cfg.flow_mode == FlowMode::Analytic) {
        return std::shared_ptr<const Flow>(make_analytic_cdf_flow(m.law));
    }
    auto flow = make_learned_flow(support_box(m.law), pilot_inputs, cfg, derive_seed(seed, 0));
    TrainConfig tc = cfg.flow_train;
    tc.seed = derive_seed(seed, 1);
    const SampleBatch batch{pilot_inputs, tc.seed, law_tag(m.law)};
    const FlowFitReport fr = fit(*flow, batch, tc);
    prov[prov_key] = flow_fit_json(fr);
    if (box) *box = LatentBox{fr.codomain_lo, fr.codomain_hi};
    return std::shared_ptr<const Flow>(std::move(flow));
}

// Latent standardizer for the autoencoder path: injected oracle or a learned
// flow fitted to the pilot latents.
std::shared_ptr<const Flow> build_latent_flow(const Matrix& latents, const PipelineConfig& cfg,
                                              std::shared_ptr<const Flow> override_flow,
                                              std::uint64_t seed, nlohmann::json& prov,
                                              const char* prov_key,
                                              std::optional<LatentBox>* box) {
    if (override_flow) {
        if (override_flow->dim() != latents.cols) {
            throw std::invalid_argument("injected latent flow dimension mismatch");
        }
        return override_flow;
    }
    if (cfg.latent_flow_mode == FlowMode::Analytic) {
        throw std::invalid_argument("analytic latent flows must be injected as overrides");
    }
    auto flow = make_learned_flow(std::nullopt, latents, cfg, derive_seed(seed, 0));
    TrainConfig tc = cfg.latent_flow_train;
    tc.seed = derive_seed(seed, 1);
    const SampleBatch batch{latents, tc.seed, "latent"};
    const FlowFitReport fr = fit(*flow, batch, tc);
    prov[prov_key] = flow_fit_json(fr);
    if (box) *box = LatentBox{fr.codomain_lo, fr.codomain_hi};
    return std::shared_ptr<const Flow>(std::move(flow));
}

struct PilotStats {
    double rho = 0.0;
    double beta = 0.0;
};

PilotStats pilot_correlation(const Vec& q_hf, const Vec& q_mod, std::vector<std::string>& warnings,
                             int pilot_n) {
    PilotStats st;
    try {
        st.rho = pearson(q_hf, q_mod);
        st.beta = optimal_beta(q_hf, q_mod);
    } catch (const std::domain_error&) {
        warnings.push_back("degenerate pilot: rho and beta set to 0");
        st.rho = 0.0;
        st.beta = 0.0;
    }
    if (pilot_n < 10) warnings.push_back("pilot too small for stable beta");
    return st;
}

AllocationPlan make_plan(const PipelineConfig& cfg, double w, const PilotStats& st) {
    if (cfg.reuse_pilot) {
        // No new high-fidelity runs: keep the pilot as the shared sample and
        // spend the remaining budget on low-fidelity evaluations alone.
        AllocationPlan plan;
        plan.budget = cfg.budget;
        plan.rho_pilot = st.rho;
        plan.beta = st.beta;
        plan.n_hf = cfg.pilot_n;
        const double room = (cfg.budget + w - static_cast<double>(plan.n_hf)) / w;
        plan.n_lf = std::max(static_cast<long long>(std::floor(room)), plan.n_hf);
        plan.gamma = static_cast<double>(plan.n_lf) / static_cast<double>(plan.n_hf);
        return plan;
    }
    AllocationPlan plan = optimal_allocation(cfg.budget, w, st.rho);
    plan.beta = st.beta;
    return plan;
}

EstimatorReport final_estimate(const ModelSpec& hf, const ModelSpec& lf_mod,
                               const AllocationPlan& plan, const Vec& q_hf_pilot,
                               const Vec& q_mod_pilot, bool reuse_pilot, std::uint64_t fresh_seed,
                               std::uint64_t report_seed) {
    if (reuse_pilot) {
        Vec q_lf_all = q_mod_pilot;
        const long long extra = plan.n_lf - plan.n_hf;
        if (extra > 0) {
            const SampleBatch more = sample(hf.law, checked_int(extra, "final_estimate"),
                                            fresh_seed);
            const Vec q_extra = evaluate_rows(lf_mod, more.data);
            q_lf_all.insert(q_lf_all.end(), q_extra.begin(), q_extra.end());
        }
        return mfmc_combine(q_hf_pilot, q_lf_all, plan.beta, lf_mod.cost, report_seed);
    }
    const SampleBatch fresh = sample(hf.law, checked_int(plan.n_lf, "final_estimate"), fresh_seed);
    const Vec q_lf_all = evaluate_rows(lf_mod, fresh.data);
    Matrix head(checked_int(plan.n_hf, "final_estimate"), fresh.data.cols);
    for (int i = 0; i < head.rows; ++i) {
        for (int j = 0; j < head.cols; ++j) head(i, j) = fresh.data(i, j);
    }
    const Vec q_hf = evaluate_rows(hf, head);
    return mfmc_combine(q_hf, q_lf_all, plan.beta, lf_mod.cost, report_seed);
}

void fill_common_provenance(EstimatorReport& rep, nlohmann::json& prov, const ModelSpec& lf,
                            const PipelineConfig& cfg, const AllocationPlan& plan,
                            const PilotStats& st, const std::shared_ptr<ClampLog>& clamp_log,
                            std::vector<std::string>& warnings, const Vec& q_hf_pilot,
                            const Vec& q_mod_pilot) {
    if (cfg.record_pilot_scatter) {
        prov["pilot_scatter"] = {{"hf", q_hf_pilot}, {"lf", q_mod_pilot}};
    }
    prov["plan"] = {{"n_hf", plan.n_hf},   {"n_lf", plan.n_lf},
                    {"gamma", plan.gamma}, {"gamma_capped", plan.gamma_capped},
                    {"budget", plan.budget}};
    prov["rho_realized"] = rep.rho;
    if (std::abs(st.rho) <= 1.0 && lf.cost <= 1.0) {
        const double f = variance_reduction_factor(st.rho, lf.cost);
        prov["variance_reduction_factor"] = f;
        prov["variance_reduction_factor_squared"] = f * f;
    }
    double lhs = 0.0, rhs = 0.0;
    const bool ben = mfmc_beneficial(st.rho, lf.cost, &lhs, &rhs);
    prov["beneficial"] = {{"holds", ben}, {"lhs", lhs}, {"rhs", rhs}};
    prov["pilot"] = {{"n", cfg.pilot_n},
                     {"hf_cost", static_cast<double>(cfg.pilot_n)},
                     {"lf_cost", cfg.pilot_n * lf.cost},
                     {"modified_lf_reeval_cost", cfg.pilot_n * lf.cost},
                     {"budget_excluded", true}};
    prov["clamped_samples"] = clamp_log->samples;
    prov["clamped_coordinates"] = clamp_log->coordinates;
    prov["r"] = cfg.r;
    prov["reuse_pilot"] = cfg.reuse_pilot;
    prov["warnings"] = warnings;

    rep.rho = st.rho;
    for (auto it = prov.begin(); it != prov.end(); ++it) rep.provenance[it.key()] = it.value();
}

}  // namespace

EstimatorReport pipeline_mfmc_as(const ModelSpec& hf, const ModelSpec& lf,
                                 const PipelineConfig& cfg, std::uint64_t seed) {
    check_pipeline_config("pipeline_mfmc_as", hf, lf, cfg);
    nlohmann::json prov;
    prov["gradient_mode"] = gradient_mode_name(cfg.gradient_mode);
    prov["flow_mode"] = flow_mode_name(cfg.flow_mode);
    std::vector<std::string> warnings;

    const char* stage = "pilot";
    try {
        const SampleBatch pilot = sample(hf.law, cfg.pilot_n, derive_seed(seed, 1));
        const Matrix lf_inputs =
            cfg.hf_to_lf ? transform_rows(pilot.data, cfg.hf_to_lf, lf.d) : pilot.data;
        const Vec q_hf_pilot = evaluate_rows(hf, pilot.data);
        const Vec q_lf_pilot = evaluate_rows(lf, lf_inputs);

        stage = "flows";
        std::optional<LatentBox> lf_box;
        const auto t_hf = build_input_flow(hf, pilot.data, cfg, cfg.flow_hf_override,
                                           derive_seed(seed, 2), prov, "flow_hf", nullptr);
        const auto t_lf = build_input_flow(lf, lf_inputs, cfg, cfg.flow_lf_override,
                                           derive_seed(seed, 3), prov, "flow_lf", &lf_box);

        stage = "gradients";
        const Matrix eta_hf = forward_rows(*t_hf, pilot.data);
        const Matrix eta_lf = forward_rows(*t_lf, lf_inputs);
        const GradientSource g_hf = make_gradient_source(hf, t_hf, eta_hf, q_hf_pilot, cfg,
                                                         derive_seed(seed, 4), prov,
                                                         "surrogate_hf");
        const GradientSource g_lf = make_gradient_source(lf, t_lf, eta_lf, q_lf_pilot, cfg,
                                                         derive_seed(seed, 5), prov,
                                                         "surrogate_lf");

        stage = "c_matrices";
        const Matrix c_hf = estimate_c_matrix(g_hf, eta_hf);
        const Matrix c_lf = estimate_c_matrix(g_lf, eta_lf);

        stage = "subspaces";
        const ActiveSubspace as_hf =
            cfg.as_hf_override ? *cfg.as_hf_override : active_subspace(c_hf, cfg.r);
        ActiveSubspace as_lf =
            cfg.as_lf_override ? *cfg.as_lf_override : active_subspace(c_lf, cfg.r);
        const Matrix z_hf = project_rows(as_hf, eta_hf);
        const Matrix z_lf = project_rows(as_lf, eta_lf);
        const Vec signs = match_latent_signs(as_lf, z_hf, z_lf);
        prov["eigenvalues_hf"] = as_hf.eigenvalues;
        prov["eigenvalues_lf"] = as_lf.eigenvalues;
        prov["sign_flips"] = signs;

        stage = "modified_lf";
        auto clamp_log = std::make_shared<ClampLog>();
        const ModelSpec lf_as = build_lf_as(lf, hf.law, t_hf, t_lf, as_hf, as_lf, lf_box,
                                            clamp_log);

        stage = "pilot_correlation";
        const Vec q_mod_pilot = evaluate_rows(lf_as, pilot.data);
        const PilotStats st = pilot_correlation(q_hf_pilot, q_mod_pilot, warnings, cfg.pilot_n);

        stage = "allocation";
        const AllocationPlan plan = make_plan(cfg, lf.cost, st);

        stage = "estimate";
        EstimatorReport rep = final_estimate(hf, lf_as, plan, q_hf_pilot, q_mod_pilot,
                                             cfg.reuse_pilot, derive_seed(seed, 6), seed);
        rep.method = "mfmc_as";
        rep.qoi = hf.label;
        fill_common_provenance(rep, prov, lf, cfg, plan, st, clamp_log, warnings,
                               q_hf_pilot, q_mod_pilot);
        return rep;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("pipeline_mfmc_as[") + stage + "]: " + e.what());
    }
}

EstimatorReport pipeline_mfmc_ae(const ModelSpec& hf, const ModelSpec& lf,
                                 const PipelineConfig& cfg, std::uint64_t seed) {
    check_pipeline_config("pipeline_mfmc_ae", hf, lf, cfg);
    if (cfg.model_as_encoder && cfg.r != 1) {
        throw std::invalid_argument("pipeline_mfmc_ae: model-as-encoder needs r == 1");
    }
    if (cfg.ae_override && cfg.ae_override->model_as_encoder != cfg.model_as_encoder) {
        throw std::invalid_argument(
            "pipeline_mfmc_ae: injected autoencoders disagree with model_as_encoder");
    }
    nlohmann::json prov;
    prov["model_as_encoder"] = cfg.model_as_encoder;
    std::vector<std::string> warnings;

    const char* stage = "pilot";
    try {
        const SampleBatch pilot = sample(hf.law, cfg.pilot_n, derive_seed(seed, 1));
        const Matrix lf_inputs =
            cfg.hf_to_lf ? transform_rows(pilot.data, cfg.hf_to_lf, lf.d) : pilot.data;
        const Vec q_hf_pilot = evaluate_rows(hf, pilot.data);
        const Vec q_lf_pilot = evaluate_rows(lf, lf_inputs);

        stage = "surrogates";
        DenseNet surrogate_hf, surrogate_lf;
        if (!cfg.ae_override) {
            SearchSpace space = cfg.surrogate_search;
            space.seed = derive_seed(seed, 4);
            FitResult fit_hf = fit_net_with_search(pilot.data, column_matrix(q_hf_pilot), space,
                                                   cfg.surrogate_epochs);
            prov["surrogate_hf"] = {{"validation_loss", fit_hf.report.final_validation_loss},
                                    {"train_loss", fit_hf.report.final_train_loss}};
            surrogate_hf = std::move(fit_hf.net);
            if (!cfg.model_as_encoder) {
                space.seed = derive_seed(seed, 5);
                FitResult fit_lf = fit_net_with_search(lf_inputs, column_matrix(q_lf_pilot), space,
                                                       cfg.surrogate_epochs);
                prov["surrogate_lf"] = {{"validation_loss", fit_lf.report.final_validation_loss},
                                        {"train_loss", fit_lf.report.final_train_loss}};
                surrogate_lf = std::move(fit_lf.net);
            }
        }

        stage = "autoencoders";
        AePair aes;
        if (cfg.ae_override) {
            aes = *cfg.ae_override;
        } else if (cfg.model_as_encoder) {
            aes.model_as_encoder = true;
            aes.hf.encoder = surrogate_hf;
            // Decoders are elided in this mode; placeholders keep the pair whole.
            aes.hf.decoder = make_dense_net({1, 1}, Activation::Tanh, 0);
            aes.lf.encoder = make_dense_net({1, 1}, Activation::Tanh, 0);
            aes.lf.decoder = make_dense_net({1, 1}, Activation::Tanh, 0);
        } else {
            aes.model_as_encoder = false;
            aes.hf = make_autoencoder(hf.d, cfg.r, cfg.ae_encoder_hidden, cfg.ae_decoder_hidden,
                                      pilot.data, derive_seed(seed, 7));
            AeTrainConfig atc = cfg.ae_train;
            atc.seed = derive_seed(seed, 7);
            const AeTrainReport ar_hf =
                train_autoencoder(aes.hf, surrogate_hf, pilot.data, q_hf_pilot, atc);
            prov["ae_hf"] = {{"initial_loss", ar_hf.initial_loss},
                             {"final_loss", ar_hf.final_loss}};
            aes.lf = make_autoencoder(lf.d, cfg.r, cfg.ae_encoder_hidden, cfg.ae_decoder_hidden,
                                      lf_inputs, derive_seed(seed, 8));
            atc.seed = derive_seed(seed, 8);
            const AeTrainReport ar_lf =
                train_autoencoder(aes.lf, surrogate_lf, lf_inputs, q_lf_pilot, atc);
            prov["ae_lf"] = {{"initial_loss", ar_lf.initial_loss},
                             {"final_loss", ar_lf.final_loss}};
        }

        stage = "latents";
        Matrix z_hf(cfg.pilot_n, cfg.r);
        for (int i = 0; i < cfg.pilot_n; ++i) {
            const Vec zi = aes.hf.encoder.forward(pilot.data.row_vec(i));
            for (int j = 0; j < cfg.r; ++j) z_hf(i, j) = zi[static_cast<std::size_t>(j)];
        }
        Matrix z_lf;
        if (aes.model_as_encoder) {
            // The low-fidelity latent law is the law of the model output, so
            // the pilot values already computed are its sample.
            z_lf = column_matrix(q_lf_pilot);
        } else {
            z_lf = Matrix(cfg.pilot_n, cfg.r);
            for (int i = 0; i < cfg.pilot_n; ++i) {
                const Vec zi = aes.lf.encoder.forward(lf_inputs.row_vec(i));
                for (int j = 0; j < cfg.r; ++j) z_lf(i, j) = zi[static_cast<std::size_t>(j)];
            }
        }

        stage = "latent_flows";
        std::optional<LatentBox> lf_box;
        const auto s_hf = build_latent_flow(z_hf, cfg, cfg.latent_flow_hf_override,
                                            derive_seed(seed, 9), prov, "latent_flow_hf", nullptr);
        const auto s_lf = build_latent_flow(z_lf, cfg, cfg.latent_flow_lf_override,
                                            derive_seed(seed, 10), prov, "latent_flow_lf",
                                            &lf_box);

        stage = "alignment";
        const Matrix zn_hf = forward_rows(*s_hf, z_hf);
        const Matrix zn_lf = forward_rows(*s_lf, z_lf);
        const LatentAlignment alignment = align_latents(zn_hf, zn_lf);
        prov["alignment"] = {{"perm", alignment.perm},
                             {"sign", alignment.sign},
                             {"greedy", alignment.greedy}};

        stage = "modified_lf";
        auto clamp_log = std::make_shared<ClampLog>();
        const ModelSpec lf_ae = build_lf_ae(lf, hf.law, aes, s_hf, s_lf, alignment, lf_box,
                                            clamp_log);

        stage = "pilot_correlation";
        const Vec q_mod_pilot = evaluate_rows(lf_ae, pilot.data);
        const PilotStats st = pilot_correlation(q_hf_pilot, q_mod_pilot, warnings, cfg.pilot_n);

        stage = "allocation";
        const AllocationPlan plan = make_plan(cfg, lf.cost, st);

        stage = "estimate";
        EstimatorReport rep = final_estimate(hf, lf_ae, plan, q_hf_pilot, q_mod_pilot,
                                             cfg.reuse_pilot, derive_seed(seed, 6), seed);
        rep.method = "mfmc_ae";
        rep.qoi = hf.label;
        fill_common_provenance(rep, prov, lf, cfg, plan, st, clamp_log, warnings,
                               q_hf_pilot, q_mod_pilot);
        return rep;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("pipeline_mfmc_ae[") + stage + "]: " + e.what());
    }
}

}  // namespace mfuq
