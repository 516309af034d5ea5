#include <benchmark/benchmark.h>

#include "kwdial/decode.hpp"

using namespace kwdial;

namespace {

Transformer<float> desk_model() {
  ModelConfig c;
  c.vocab_size = 2000;
  c.d_model = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 256;
  c.max_len = 128;
  return Transformer<float>::initialize(c, 5);
}

const std::vector<std::vector<TokenId>> kContext = {{20, 21, 22, 23, 24}, {30, 31, 32}};
const std::vector<TokenId> kKeywords = {40};

void BM_Nucleus(benchmark::State& state) {
  auto model = desk_model();
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::nucleus;
  dc.max_new_tokens = 30;
  for (auto _ : state) {
    TransformerSession s(model, kContext, kKeywords, dc.max_new_tokens);
    benchmark::DoNotOptimize(nucleus_sample(s, dc));
    ++dc.seed;
  }
}
BENCHMARK(BM_Nucleus);

void BM_DiverseBeam(benchmark::State& state) {
  auto model = desk_model();
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::diverse_beam;
  dc.beams = static_cast<int>(state.range(0));
  dc.groups = static_cast<int>(state.range(1));
  dc.max_new_tokens = 20;
  for (auto _ : state) {
    TransformerSession s(model, kContext, kKeywords, dc.max_new_tokens);
    benchmark::DoNotOptimize(diverse_beam_search(s, dc));
  }
}
BENCHMARK(BM_DiverseBeam)->Args({4, 1})->Args({10, 2});

void BM_NucleusSelect(benchmark::State& state) {
  std::vector<double> probs(4000);
  double z = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) z += probs[i] = 1.0 / static_cast<double>(i + 1);
  for (auto& p : probs) p /= z;
  double u = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(nucleus_select(probs, 0.9, u));
    u = u > 0.99 ? 0.0 : u + 0.013;
  }
}
BENCHMARK(BM_NucleusSelect);

}  // namespace
