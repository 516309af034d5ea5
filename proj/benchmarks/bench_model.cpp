#include <benchmark/benchmark.h>

#include <random>

#include "kwdial/model.hpp"

using namespace kwdial;

namespace {

ModelConfig desk(int vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 256;
  c.max_len = 128;
  c.dropout = 0.0;
  return c;
}

EncodedInput input_of_length(int len, int vocab) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<TokenId>> context(1);
  for (int i = 0; i < len / 2; ++i)
    context[0].push_back(special::kCount + static_cast<TokenId>(rng() % (vocab - special::kCount)));
  std::vector<TokenId> response(context[0].begin(), context[0].end());
  EncodeOptions opts;
  opts.max_len = 128;
  return encode_example(context, response, {}, opts);
}

void BM_Forward(benchmark::State& state) {
  const int vocab = 2000;
  auto model = Transformer<float>::initialize(desk(vocab), 1);
  auto in = input_of_length(static_cast<int>(state.range(0)), vocab);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(in));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(in.size()));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(120);

void BM_ForwardBackward(benchmark::State& state) {
  const int vocab = 2000;
  auto cfg = desk(vocab);
  auto model = Transformer<float>::initialize(cfg, 1);
  auto grads = Parameters<float>::zeros(cfg);
  auto in = input_of_length(static_cast<int>(state.range(0)), vocab);
  for (auto _ : state) {
    ForwardCache<float> cache;
    auto fwd = model.forward(in, &cache);
    Matrix<float> dlogits = Matrix<float>::Constant(fwd.logits.rows(), fwd.logits.cols(), 1e-3f);
    model.backward(in, cache, &dlogits, 0.0f, grads);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(in.size()));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Arg(120);

void BM_IncrementalStep(benchmark::State& state) {
  const int vocab = 2000;
  auto model = Transformer<float>::initialize(desk(vocab), 1);
  for (auto _ : state) {
    auto s = model.start();
    for (int t = 0; t < 64; ++t) benchmark::DoNotOptimize(model.step(s, special::kCount + t, InputState::speaker2));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_IncrementalStep);

}  // namespace
