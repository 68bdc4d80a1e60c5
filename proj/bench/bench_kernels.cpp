#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "afford3d/kernels.hpp"
#include "afford3d/losses.hpp"

using namespace afford3d;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed) {
  const auto v = random_values(3 * n, seed);
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pts;
}

void gemm(benchmark::State& state, kernels::Exec exec) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::gemm(false, false, n, n, n, a, b, c, false, exec);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

void weights(benchmark::State& state, kernels::Exec exec) {
  const auto pts = random_cloud(static_cast<std::size_t>(state.range(0)), 3);
  const SpatialIndex index(pts);
  for (auto _ : state) benchmark::DoNotOptimize(losses::spatial_weights(index, 0.1, 0.01, exec).omega.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GemmSerial(benchmark::State& s) { gemm(s, kernels::Exec::Serial); }
void BM_GemmParallel(benchmark::State& s) { gemm(s, kernels::Exec::Parallel); }
void BM_WeightsSerial(benchmark::State& s) { weights(s, kernels::Exec::Serial); }
void BM_WeightsParallel(benchmark::State& s) { weights(s, kernels::Exec::Parallel); }

}  // namespace

BENCHMARK(BM_GemmSerial)->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(BM_WeightsSerial)->Arg(2048)->Arg(16384)->UseRealTime();
BENCHMARK(BM_WeightsParallel)->Arg(2048)->Arg(16384)->UseRealTime();

BENCHMARK_MAIN();
