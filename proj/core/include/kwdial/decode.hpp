#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "kwdial/model.hpp"
#include "kwdial/vocab.hpp"

namespace kwdial {

enum class DecodeStrategy { nucleus, diverse_beam, greedy };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::nucleus;
  double top_p = 0.9;
  int beams = 10;
  int groups = 2;
  double diversity_penalty = 5.5;
  int max_new_tokens = 40;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Incremental next-token source for one hypothesis. Implementations:
// TransformerSession below, and static-distribution fixtures in tests.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual std::unique_ptr<DecoderSession> clone() const = 0;
  // Unnormalized scores for the next token; -inf marks banned tokens.
  virtual std::span<const float> next_logits() const = 0;
  virtual void append(TokenId token) = 0;
  // Token that ends a hypothesis, or -1 when the source never stops.
  virtual TokenId end_token() const = 0;
  // Upper bound on new tokens this session can still accept.
  virtual int remaining_capacity() const = 0;
};

// Prompt = keyword block + context + the opened response block. Reserved
// tokens other than <eos> are never proposed.
class TransformerSession final : public DecoderSession {
 public:
  TransformerSession(const Transformer<float>& model, std::span<const std::vector<TokenId>> context,
                     std::span<const TokenId> keywords, int max_new_tokens,
                     ResponseOpener opener = ResponseOpener::speaker);

  std::unique_ptr<DecoderSession> clone() const override;
  std::span<const float> next_logits() const override;
  void append(TokenId token) override;
  TokenId end_token() const override { return special::kEos; }
  int remaining_capacity() const override;

  const EncodedInput& prompt() const { return prompt_; }

 private:
  void set_logits(const RowVector<float>& row);

  const Transformer<float>* model_ = nullptr;
  EncodedInput prompt_;
  DecoderState<float> state_;
  std::vector<float> logits_;
};

struct Generation {
  std::vector<TokenId> tokens;  // generated tokens, end token excluded
  double log_prob = 0.0;        // cumulative model log-probability (after temperature)
  double score = 0.0;           // log_prob / number of generated tokens incl. the end token
  int group = 0;
  bool finished = false;        // ended with the end token
};

// Observer for instrumented nucleus checks: (nucleus token set, chosen token).
using NucleusObserver = std::function<void(std::span<const TokenId>, TokenId)>;

struct NucleusChoice {
  TokenId token = -1;
  std::size_t nucleus_size = 0;
};

// Smallest probability-sorted prefix with cumulative mass >= top_p (ties by
// lower id), then inverse-CDF draw with u in [0,1) over the renormalized prefix.
NucleusChoice nucleus_select(std::span<const double> probs, double top_p, double u,
                             std::vector<TokenId>* nucleus = nullptr);

Generation greedy_decode(const DecoderSession& start, const DecodeConfig& config);
Generation nucleus_sample(const DecoderSession& start, const DecodeConfig& config,
                          const NucleusObserver& observer = {});

// Grouped beam search with Hamming diversity between groups; results sorted
// by length-normalized score (ties by group, then generation order).
std::vector<Generation> diverse_beam_search(const DecoderSession& start, const DecodeConfig& config);

// Dispatches on config.strategy; nucleus and greedy return a single result.
std::vector<Generation> decode(const DecoderSession& start, const DecodeConfig& config);

// Log-softmax with temperature in double precision.
std::vector<double> log_softmax(std::span<const float> logits, double temperature = 1.0);

}  // namespace kwdial
