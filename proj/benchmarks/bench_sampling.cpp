#include <benchmark/benchmark.h>

#include "mfuq/input_law.hpp"
#include "mfuq/special_functions.hpp"

namespace {

void bm_sample_uniform_square(benchmark::State& state) {
    const mfuq::InputLaw law{mfuq::UniformBox{{-1.0, -1.0}, {1.0, 1.0}}};
    const int n = static_cast<int>(state.range(0));
    std::uint64_t seed = 1;
    for (auto _ : state) {
        auto batch = mfuq::sample(law, n, seed++);
        benchmark::DoNotOptimize(batch.data.a.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_sample_uniform_square)->Arg(1000)->Arg(100000);

void bm_sample_gaussian(benchmark::State& state) {
    const mfuq::InputLaw law{mfuq::StdGaussian{2}};
    const int n = static_cast<int>(state.range(0));
    std::uint64_t seed = 1;
    for (auto _ : state) {
        auto batch = mfuq::sample(law, n, seed++);
        benchmark::DoNotOptimize(batch.data.a.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_sample_gaussian)->Arg(1000)->Arg(100000);

void bm_sample_triangle(benchmark::State& state) {
    const mfuq::InputLaw law{
        mfuq::Triangle2D{{0.25e-3, 4e-3}, {1.75e-3, 5e-3}, {1e-3, 6e-3}}};
    const int n = static_cast<int>(state.range(0));
    std::uint64_t seed = 1;
    for (auto _ : state) {
        auto batch = mfuq::sample(law, n, seed++);
        benchmark::DoNotOptimize(batch.data.a.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_sample_triangle)->Arg(1000)->Arg(100000);

void bm_erf_inv(benchmark::State& state) {
    double p = -0.999;
    double acc = 0.0;
    for (auto _ : state) {
        acc += mfuq::erf_inv(p);
        p += 0.001;
        if (p >= 1.0) p = -0.999;
    }
    benchmark::DoNotOptimize(acc);
}
BENCHMARK(bm_erf_inv);

}  // namespace

BENCHMARK_MAIN();
