#include <benchmark/benchmark.h>

#include <random>

#include "nkn/datagen.hpp"
#include "nkn/layers.hpp"
#include "nkn/mlp.hpp"
#include "nkn/stability.hpp"
#include "nkn/training.hpp"

using namespace nkn;

namespace {

OperatorModel bench_model(std::size_t depth) {
  ModelSpec spec;
  spec.depth = depth;
  spec.kernel_hidden = {64, 64};
  spec.seed = 1;
  return assemble_model(spec);
}

void BM_KernelMlpBatch(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const MLPParams p = mlp_init({2, 64, 64, 1}, 3);
  ad::DenseArray x({rows, 2});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  for (double& v : x.values()) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_forward_batch(p, x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_KernelMlpBatch)->Arg(101 * 101)->Unit(benchmark::kMillisecond);

void BM_ForwardReference(benchmark::State& state) {
  const Grid g = make_uniform_grid(101, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  const OperatorModel m = bench_model(static_cast<std::size_t>(state.range(0)));
  const Dataset ds = gen_poisson_1d(1, g, 1);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward_reference(m, ds.input_sample(0), g, nb));
}
BENCHMARK(BM_ForwardReference)->Arg(2)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  const Grid g = make_uniform_grid(101, 1);
  const Dataset ds = gen_poisson_1d(50, g, 1);
  const OperatorModel m = bench_model(static_cast<std::size_t>(state.range(0)));
  Trainer tr(m, ds);
  std::vector<std::size_t> ids(ds.samples);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  for (auto _ : state) benchmark::DoNotOptimize(tr.loss_and_gradient(m, ids));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.samples));
}
BENCHMARK(BM_LossAndGradient)->Arg(2)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_EigSpectrum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ad::DenseArray a({n, n});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (double& v : a.values()) v = nd(rng);
  for (auto _ : state) benchmark::DoNotOptimize(eig_spectrum(a));
}
BENCHMARK(BM_EigSpectrum)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);

void BM_DarcySolve(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::vector<double> b = grf_darcy_permeability(1, n, 0);
  const std::vector<double> f(n * n, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(fd_solve_darcy(b, f, n));
}
BENCHMARK(BM_DarcySolve)->Arg(61)->Arg(241)->Unit(benchmark::kMillisecond);

void BM_Neighborhood2d(benchmark::State& state) {
  const Grid g = make_uniform_grid(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(build_neighborhood(g, 0.1));
}
BENCHMARK(BM_Neighborhood2d)->Arg(31)->Arg(61)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
