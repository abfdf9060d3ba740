#include <benchmark/benchmark.h>

#include <random>

#include "kspoc/metrics.hpp"

using namespace kspoc;

namespace {

EmpiricalMeasure cloud(std::size_t m, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(m * d);
  for (auto& x : v) x = nd(rng);
  return EmpiricalMeasure(std::move(v), d);
}

}  // namespace

static void BM_Assignment(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(m, 2, 1), b = cloud(m, 2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(wp_assignment(a, b, 2).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Assignment)->RangeMultiplier(2)->Range(16, 512)->Complexity(benchmark::oNCubed);

static void BM_Quantile(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(m, 1, 3), b = cloud(m, 1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(w1_1d(a, b).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Quantile)->Range(256, 1 << 18)->Complexity(benchmark::oNLogN);

static void BM_Sliced(benchmark::State& state) {
  const auto a = cloud(4096, 3, 5), b = cloud(4096, 3, 6);
  for (auto _ : state) benchmark::DoNotOptimize(sliced_w1(a, b, static_cast<std::size_t>(state.range(0)), 7).value);
}
BENCHMARK(BM_Sliced)->Arg(16)->Arg(128);

BENCHMARK_MAIN();
