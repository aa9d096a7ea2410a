#include <benchmark/benchmark.h>

#include "mfuq/dense_net.hpp"
#include "mfuq/estimators.hpp"
#include "mfuq/flow.hpp"
#include "mfuq/problems.hpp"

namespace {

void bm_analytic_cdf_forward(benchmark::State& state) {
    const mfuq::InputLaw law{mfuq::UniformBox{{-1.0, -1.0}, {1.0, 1.0}}};
    const auto flow = mfuq::make_analytic_cdf_flow(law);
    const mfuq::SampleBatch batch = mfuq::sample(law, 1000, 3);
    for (auto _ : state) {
        auto pushed = mfuq::forward_rows(*flow, batch.data);
        benchmark::DoNotOptimize(pushed.a.data());
    }
    state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(bm_analytic_cdf_forward);

void bm_coupling_stack_round_trip(benchmark::State& state) {
    const auto flow = mfuq::make_coupling_stack(2, 6, 8, 1, 2.0, 17);
    mfuq::Vec x{0.3, -0.8};
    for (auto _ : state) {
        const mfuq::Vec y = flow->forward(x);
        benchmark::DoNotOptimize(flow->inverse(y).data());
    }
}
BENCHMARK(bm_coupling_stack_round_trip);

void bm_spline_nll_backward(benchmark::State& state) {
    const auto flow = mfuq::make_spline_flow(8, 4.0);
    auto* tr = dynamic_cast<mfuq::TrainableFlow*>(flow.get());
    mfuq::Vec grad(tr->param_count());
    const mfuq::Vec x{0.42};
    for (auto _ : state) {
        benchmark::DoNotOptimize(tr->nll_backward(x, &grad));
    }
}
BENCHMARK(bm_spline_nll_backward);

void bm_net_forward(benchmark::State& state) {
    const mfuq::DenseNet net =
        mfuq::make_dense_net({2, 12, 12, 1}, mfuq::Activation::Tanh, 5);
    const mfuq::Vec x{0.1, -0.4};
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(x).data());
    }
}
BENCHMARK(bm_net_forward);

void bm_net_grad_input(benchmark::State& state) {
    const mfuq::DenseNet net =
        mfuq::make_dense_net({2, 12, 12, 1}, mfuq::Activation::Tanh, 5);
    const mfuq::Vec x{0.1, -0.4};
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.grad_input(x).data());
    }
}
BENCHMARK(bm_net_grad_input);

void bm_rd_solve(benchmark::State& state) {
    mfuq::RDConfig cfg;
    cfg.m = static_cast<int>(state.range(0));
    cfg.steps = static_cast<int>(state.range(1));
    const mfuq::FieldPair ic = mfuq::rd_initial_condition(cfg.m, 2024);
    for (auto _ : state) {
        const mfuq::FieldPair out = mfuq::rd_solve(cfg, ic);
        benchmark::DoNotOptimize(mfuq::rd_qoi(out));
    }
    state.SetItemsProcessed(state.iterations() * cfg.steps);
}
BENCHMARK(bm_rd_solve)->Args({16, 100})->Args({64, 400})->Unit(benchmark::kMillisecond);

void bm_mfmc_estimate_theoretical(benchmark::State& state) {
    const mfuq::TheoreticalExample ex = mfuq::theoretical_example();
    mfuq::AllocationPlan plan = mfuq::optimal_allocation(300.0, 0.01, ex.rho);
    plan.beta = 10.0 / 17.0;
    std::uint64_t seed = 1;
    for (auto _ : state) {
        const auto rep = mfuq::mfmc_estimate(ex.hf, ex.lf, plan, seed++);
        benchmark::DoNotOptimize(rep.estimate);
    }
}
BENCHMARK(bm_mfmc_estimate_theoretical);

}  // namespace
