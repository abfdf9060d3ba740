#include <benchmark/benchmark.h>

#include <random>

#include "kspoc/field.hpp"
#include "kspoc/simulate.hpp"

using namespace kspoc;

namespace {

std::vector<double> positions(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> y(n);
  for (auto& v : y) v = nd(rng);
  return y;
}

}  // namespace

// One recursion step: deposit + semigroup + gradient refresh.
static void BM_GridAdvance(benchmark::State& state) {
  const ModelInstance m = default_instance();
  const auto y = positions(static_cast<std::size_t>(state.range(0)), 1);
  FieldGrid grid(m, GridSpec{24.0, static_cast<std::size_t>(state.range(1))}, 1e6);
  for (auto _ : state) {
    grid.advance(y, 0.01);
    benchmark::DoNotOptimize(grid.grad_values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GridAdvance)->Args({128, 4096})->Args({1024, 4096})->Args({4096, 4096})->Args({1024, 16384});

static void BM_Deposit(benchmark::State& state) {
  const ModelInstance m = default_instance();
  const auto y = positions(static_cast<std::size_t>(state.range(0)), 2);
  const GridSpec spec{24.0, 4096};
  for (auto _ : state) benchmark::DoNotOptimize(deposit_density(y, m.kernel, spec, 0.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Deposit)->Arg(128)->Arg(1024);

// Direct history sum at one point; cost grows with history length.
static void BM_DirectEvaluate(benchmark::State& state) {
  const ModelInstance m = default_instance();
  const std::size_t n = 16;
  HistoryBuffer hist(0.01, 1, n);
  for (int k = 0; k < state.range(0); ++k) hist.push(positions(n, 10 + k));
  const double x[1] = {0.3};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_h_direct(hist, m, hist.steps(), x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DirectEvaluate)->Range(64, 4096)->Complexity(benchmark::oN);

static void BM_EulerStep(benchmark::State& state) {
  const ModelInstance m = default_instance();
  EulerConfig c;
  c.n_particles = static_cast<std::size_t>(state.range(0));
  c.n_steps = 10;
  c.threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(run_particle_system(c, m).max_m2);
  state.SetItemsProcessed(state.iterations() * state.range(0) * 10);
}
BENCHMARK(BM_EulerStep)->Args({1024, 1})->Args({1024, 4})->Args({8192, 1})->Args({8192, 4})->UseRealTime();
