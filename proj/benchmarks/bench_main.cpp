// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "plora/encoder.hpp"
#include "plora/objectives.hpp"
#include "plora/plora_layer.hpp"

namespace plora {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = gaussian_init(n, n, 1.0, rng);
  const Matrix b = gaussian_init(n, n, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(8)->Arg(32)->Arg(64)->Arg(128);

PLoRALinear bench_layer(const PLoRAConfig& cfg, Rng& rng) {
  PLoRALinear layer(cfg, gaussian_init(cfg.d_in, cfg.d_out, 0.2, rng), Vector(cfg.d_out), rng);
  layer.out() = gaussian_init(cfg.rank, cfg.d_out, 0.1, rng);
  return layer;
}

void BM_LayerForward(benchmark::State& state) {
  const PLoRAConfig cfg{.rank = static_cast<std::size_t>(state.range(0))};
  Rng rng(2);
  const PLoRALinear layer = bench_layer(cfg, rng);
  const Matrix h = gaussian_init(32, cfg.d_in, 1.0, rng);
  const Matrix p = Matrix::broadcast_row(gaussian_init(1, cfg.d_p, 1.0, rng).row_vector(0), 32);
  for (auto _ : state) benchmark::DoNotOptimize(layer.forward(h, p));
}
BENCHMARK(BM_LayerForward)->Arg(2)->Arg(4)->Arg(16);

void BM_LayerBackward(benchmark::State& state) {
  const PLoRAConfig cfg{.rank = static_cast<std::size_t>(state.range(0))};
  Rng rng(3);
  const PLoRALinear layer = bench_layer(cfg, rng);
  const Matrix h = gaussian_init(32, cfg.d_in, 1.0, rng);
  const Matrix p = Matrix::broadcast_row(gaussian_init(1, cfg.d_p, 1.0, rng).row_vector(0), 32);
  const Matrix up = gaussian_init(32, cfg.d_out, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(layer.backward(h, p, up));
}
BENCHMARK(BM_LayerBackward)->Arg(2)->Arg(4)->Arg(16);

TokenSequence bench_tokens(const EncoderConfig& c) {
  TokenSequence t(c.max_len);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<TokenId>((i * 37) % c.vocab_size);
  return t;
}

void BM_EncoderForward(benchmark::State& state) {
  EncoderConfig c;
  c.n_layers = static_cast<std::size_t>(state.range(0));
  const EncoderModel m = EncoderModel::create(c, 4);
  const TokenSequence t = bench_tokens(c);
  const Vector p(c.plora.d_p, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(t, p));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(2);

void BM_EncoderTrainStep(benchmark::State& state) {
  EncoderConfig c;
  c.n_layers = static_cast<std::size_t>(state.range(0));
  const EncoderModel m = EncoderModel::create(c, 5);
  const TokenSequence t = bench_tokens(c);
  const Vector p(c.plora.d_p, 0.5);
  const Vector zero(c.plora.d_p);
  const ObjectiveConfig objective{.alpha = 2.5};
  for (auto _ : state) {
    const ForwardTrace personal = m.forward(t, p);
    const ForwardTrace generic = m.forward(t, zero);
    const FullShotLoss loss = fullshot_loss(personal, &generic, 2, objective);
    ModelGradients g = m.backward(personal, loss.personal_seeds);
    g += m.backward(generic, loss.generic_seeds);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_EncoderTrainStep)->Arg(1)->Arg(2);

// Inference for one user: adapters applied on the fly versus folded into W and b.
void BM_InferenceUnmerged(benchmark::State& state) {
  const EncoderConfig c;
  const EncoderModel m = EncoderModel::create(c, 6);
  const TokenSequence t = bench_tokens(c);
  const Vector p(c.plora.d_p, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(t, p));
}
BENCHMARK(BM_InferenceUnmerged);

void BM_InferenceMerged(benchmark::State& state) {
  const EncoderConfig c;
  EncoderModel m = EncoderModel::create(c, 6);
  const Vector p(c.plora.d_p, 0.5);
  m.merge_for_user(p, "bench");
  const TokenSequence t = bench_tokens(c);
  const Vector zero(c.plora.d_p);
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(t, zero));
}
BENCHMARK(BM_InferenceMerged);

}  // namespace
}  // namespace plora

BENCHMARK_MAIN();
