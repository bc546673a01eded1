#include <benchmark/benchmark.h>

#include <random>

#include "protoforge/encoder.hpp"
#include "protoforge/evalharness.hpp"
#include "protoforge/objective.hpp"
#include "protoforge/solvers.hpp"

namespace pf = protoforge;

namespace {

pf::EmbeddingMatrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> data(rows * cols);
  for (auto& x : data) x = n(rng);
  return pf::EmbeddingMatrix(rows, cols, std::move(data));
}

void BM_Svd(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const pf::EmbeddingMatrix v = gaussian(k, d, 1);
  for (auto _ : state) benchmark::DoNotOptimize(pf::svd(v));
}
BENCHMARK(BM_Svd)->Args({10, 64})->Args({64, 512})->Unit(benchmark::kMillisecond);

void BM_LossGrad(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const pf::EmbeddingMatrix x = gaussian(k, d, 2);
  const pf::EmbeddingMatrix v = gaussian(k, d, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pf::loss(x, v, 2.0));
    benchmark::DoNotOptimize(pf::loss_grad_x(x, v, 2.0));
  }
}
BENCHMARK(BM_LossGrad)->Args({10, 64})->Args({100, 512});

void BM_EncodeClasses(benchmark::State& state) {
  const pf::EncoderParams params = pf::make_encoder(pf::EncoderDims{}, 4);
  const auto adapters = pf::make_adapters(params, 8, 5);
  const auto names = pf::benchmark_class_names(10);
  const pf::ClassTokens tokens = pf::make_class_tokens(
      names, pf::default_templates(), pf::XMode::kAveraged, params.dims.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(pf::encode_classes(params, adapters, tokens, true));
}
BENCHMARK(BM_EncodeClasses);

void BM_SoftDirect(benchmark::State& state) {
  pf::PrototypeSet p;
  p.v = pf::normalize_rows(gaussian(10, 64, 6));
  for (auto _ : state) {
    benchmark::DoNotOptimize(pf::solve_soft_direct(p, pf::ObjectiveConfig{}, pf::TrainConfig{}));
  }
}
BENCHMARK(BM_SoftDirect)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
