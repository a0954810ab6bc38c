#include <benchmark/benchmark.h>

#include <random>

#include "mmm/kmeans.hpp"
#include "mmm/rvq.hpp"

namespace {

mmm::Matrix random_frames(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  mmm::Matrix m(n, dim);
  for (float& v : m.values) v = static_cast<float>(dist(rng));
  return m;
}

void BM_assign_batch(benchmark::State& state) {
  const auto k = static_cast<std::uint32_t>(state.range(0));
  const auto dim = static_cast<std::size_t>(state.range(1));
  const std::size_t n = 20000;
  const mmm::Matrix frames = random_frames(n, dim, 1);
  mmm::Codebook cb;
  cb.centroids = random_frames(k, dim, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmm::assign_batch(cb, frames, 1));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_assign_batch)->Args({100, 32})->Args({500, 64})->Args({500, 128});

void BM_kmeans_iteration(benchmark::State& state) {
  const auto k = static_cast<std::uint32_t>(state.range(0));
  const std::size_t n = 20000, dim = 64;
  const mmm::Matrix frames = random_frames(n, dim, 3);
  mmm::TrainConfig cfg;
  cfg.clusters = k;
  cfg.max_iters = 5;
  cfg.rel_tol = 0.0;
  cfg.seed = 4;
  cfg.jobs = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmm::kmeans_train(frames, cfg));
  }
  // 5 Lloyd iterations plus the closing assignment pass.
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n) * 6);
}
BENCHMARK(BM_kmeans_iteration)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_rvq_encode(benchmark::State& state) {
  const auto stages = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 20000, dim = 64;
  std::mt19937_64 rng(5);
  mmm::ResidualStack stack;
  for (std::size_t m = 0; m < stages; ++m) {
    mmm::Codebook cb;
    cb.centroids = random_frames(500, dim, 10 + m);
    stack.codebooks.push_back(std::move(cb));
  }
  mmm::FeatureSequence seq;
  seq.frame_rate = {50, 1};
  seq.data = random_frames(n, dim, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmm::rvq_encode(stack, seq, 1));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * stages));
}
BENCHMARK(BM_rvq_encode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
