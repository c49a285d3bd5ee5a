#include "cellflow/cell_problem.hpp"
#include "cellflow/fractional_pde.hpp"
#include "cellflow/sde_engine.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace cellflow;

static void BM_SdeStep(benchmark::State& state) {
  const auto field = HamiltonianField::sin_sin();
  const double eps = std::pow(10.0, -static_cast<double>(state.range(0)));
  const SdeEngine engine(field, eps, 0.1, 5.0);
  Rng rng(1, 0);
  Vec2 x(0.3, 0.2);
  for (auto _ : state) {
    const double dt = engine.dt_for(field.velocity(x).squaredNorm());
    x = engine.step(x, dt, rng);
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(BM_SdeStep)->Arg(2)->Arg(3)->Arg(4);

static void BM_SaddleMarginals(benchmark::State& state) {
  const auto field = HamiltonianField::sin_sin();
  SimConfig cfg;
  cfg.epsilon = 1e-2;
  cfg.alpha = 0.5;
  cfg.dt_safety = 5.0;
  cfg.horizon = 0.5;
  cfg.n_paths = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample_marginals(field, cfg, Vec2::Zero(), {0.5}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SaddleMarginals)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_CellProblem(benchmark::State& state) {
  const auto field = HamiltonianField::sin_sin();
  const double eps = std::pow(10.0, -static_cast<double>(state.range(0)) / 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(effective_diffusivity(solve_corrector(field, eps)));
}
BENCHMARK(BM_CellProblem)->Arg(4)->Arg(5)->Arg(6)->Unit(benchmark::kMillisecond);

static void BM_FpdeSpectral(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto theta0 = GridField::sample(n, kTwoPi, [](const Vec2& x) { return std::cos(x.x()) * std::sin(x.y()); });
  Mat2 q;
  q << 1.8, 0.3, 0.3, 1.8;
  for (auto _ : state) benchmark::DoNotOptimize(solve_fpde(theta0, q, 0.7, {1.0}));
}
BENCHMARK(BM_FpdeSpectral)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_MittagLeffler(benchmark::State& state) {
  double x = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mittag_leffler_half(x));
    x = x < 50.0 ? x + 0.37 : 0.0;
  }
}
BENCHMARK(BM_MittagLeffler);

BENCHMARK_MAIN();
