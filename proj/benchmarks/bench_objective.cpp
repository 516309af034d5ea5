#include <benchmark/benchmark.h>

#include <random>

#include "kwdial/objective.hpp"

using namespace kwdial;

namespace {

Matrix<float> random_logits(int rows, int cols) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 2.0f);
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TokenPool pool(int size) {
  TokenPool p;
  p.keyword = "k";
  p.keyword_token = special::kCount;
  for (int i = 0; i < size; ++i)
    p.members.push_back({"m" + std::to_string(i), special::kCount + i, i == 0 ? 1.0 : 0.5});
  p.members[0].word = "k";
  return p;
}

void BM_LmLoss(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  auto m = random_logits(rows, 4000);
  std::vector<TokenId> targets(static_cast<std::size_t>(rows), special::kCount);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(rows), 1);
  for (auto _ : state) benchmark::DoNotOptimize(lm_loss<float>(m, targets, mask));
}
BENCHMARK(BM_LmLoss)->Arg(32)->Arg(128);

void BM_KeywordMinNll(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  auto m = random_logits(rows, 4000);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(rows), 1);
  for (auto _ : state) benchmark::DoNotOptimize(keyword_min_nll<float>(m, mask, special::kCount + 5));
}
BENCHMARK(BM_KeywordMinNll)->Arg(32)->Arg(128);

void BM_PooledLoss(benchmark::State& state) {
  auto m = random_logits(64, 4000);
  std::vector<std::uint8_t> mask(64, 1);
  auto p = pool(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(keyword_sim_loss<float>(m, mask, p, false));
}
BENCHMARK(BM_PooledLoss)->Arg(1)->Arg(6);

void BM_MultiKeywordLoss(benchmark::State& state) {
  auto m = random_logits(64, 4000);
  std::vector<std::uint8_t> mask(64, 1);
  KeywordSpec spec;
  spec.mode = KeywordLossMode::multi;
  for (int k = 0; k < 3; ++k) {
    TokenPool p;
    p.keyword = "k" + std::to_string(k);
    p.keyword_token = special::kCount + k;
    p.members = {{p.keyword, p.keyword_token, 1.0}};
    spec.keywords.push_back(p);
  }
  for (auto _ : state) benchmark::DoNotOptimize(keyword_loss<float>(m, mask, spec));
}
BENCHMARK(BM_MultiKeywordLoss);

}  // namespace
