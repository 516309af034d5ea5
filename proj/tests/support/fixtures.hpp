#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kwdial/corpus.hpp"
#include "kwdial/decode.hpp"
#include "kwdial/model.hpp"
#include "kwdial/vocab.hpp"

namespace fixture {

// Logits that depend only on (seed, prefix): a fixed random landscape over
// token sequences. `end_bias` raises the end token as the prefix grows.
inline std::vector<double> landscape(std::uint64_t seed, int vocab, const std::vector<int>& prefix,
                                     double scale = 2.0, int end_token = -1, double end_bias = 0.0) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL;
  for (int t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001b3ULL;
  std::mt19937_64 rng(h);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> out(static_cast<std::size_t>(vocab));
  for (auto& v : out) v = n(rng);
  if (end_token >= 0) out[static_cast<std::size_t>(end_token)] += end_bias * static_cast<double>(prefix.size());
  return out;
}

class LandscapeSession final : public kwdial::DecoderSession {
 public:
  LandscapeSession(std::uint64_t seed, int vocab, int end_token, double end_bias = 0.5, double scale = 2.0)
      : seed_(seed), vocab_(vocab), end_(end_token), bias_(end_bias), scale_(scale) {
    refresh();
  }
  std::unique_ptr<kwdial::DecoderSession> clone() const override {
    return std::make_unique<LandscapeSession>(*this);
  }
  std::span<const float> next_logits() const override { return logits_; }
  void append(kwdial::TokenId token) override {
    prefix_.push_back(token);
    refresh();
  }
  kwdial::TokenId end_token() const override { return end_; }
  int remaining_capacity() const override { return 1000; }

  std::vector<double> logits_of(const std::vector<int>& prefix) const {
    auto raw = landscape(seed_, vocab_, prefix, scale_, end_, bias_);
    // Round through float exactly as the session exposes them.
    for (auto& v : raw) v = static_cast<double>(static_cast<float>(v));
    return raw;
  }

 private:
  void refresh() {
    auto raw = landscape(seed_, vocab_, prefix_, scale_, end_, bias_);
    logits_.assign(raw.begin(), raw.end());
  }
  std::uint64_t seed_;
  int vocab_;
  int end_;
  double bias_, scale_;
  std::vector<int> prefix_;
  std::vector<float> logits_;
};

// Reserved ids followed by w0 .. w{n-1}.
inline kwdial::Vocabulary word_vocab(int n) {
  kwdial::Vocabulary v;
  for (int i = 0; i < n; ++i) v.add("w" + std::to_string(i));
  return v;
}

inline kwdial::ModelConfig tiny_config(int vocab, int d = 16, int layers = 2, int heads = 2) {
  kwdial::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_ff = 2 * d;
  c.max_len = 48;
  c.dropout = 0.0;
  return c;
}

// Random toy dialog examples over a word vocabulary (ids >= kCount).
inline std::vector<kwdial::DialogExample> toy_examples(const kwdial::Vocabulary& vocab, std::size_t n,
                                                       std::uint64_t seed, std::size_t max_turn = 5) {
  std::mt19937_64 rng(seed);
  const auto words = static_cast<std::uint64_t>(vocab.size()) - kwdial::special::kCount;
  auto word = [&] { return static_cast<kwdial::TokenId>(kwdial::special::kCount + rng() % words); };
  auto utterance = [&] {
    std::vector<kwdial::TokenId> u(1 + rng() % max_turn);
    for (auto& t : u) t = word();
    return u;
  };
  std::vector<kwdial::DialogExample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& ex = out[i];
    ex.dialog = i;
    const std::size_t turns = 1 + rng() % 3;
    for (std::size_t t = 0; t < turns; ++t) ex.context.push_back(utterance());
    ex.response = utterance();
    ex.distractor = utterance();
    for (std::size_t k = 0; k < std::min<std::size_t>(ex.response.size(), 3); ++k) {
      const auto& w = vocab.token(ex.response[k]);
      if (std::find(ex.keywords.begin(), ex.keywords.end(), w) == ex.keywords.end()) ex.keywords.push_back(w);
    }
  }
  return out;
}

}  // namespace fixture
