#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kwdial/embeddings.hpp"
#include "kwdial/model.hpp"
#include "kwdial/vocab.hpp"

namespace kwdial {

// Row-wise log-softmax view over a logits matrix; log-normalizers are
// computed lazily per row and reused across keyword and pool queries.
template <typename T>
class LogitRows {
 public:
  explicit LogitRows(const Matrix<T>& logits);
  T log_prob(Eigen::Index row, TokenId token) const;
  T log_normalizer(Eigen::Index row) const;
  const Matrix<T>& logits() const { return logits_; }

 private:
  const Matrix<T>& logits_;
  mutable std::vector<T> lse_;
  mutable std::vector<std::uint8_t> ready_;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.005;
};

// A keyword with its similarity pool resolved against a vocabulary. The
// keyword itself is always members[0] (similarity 1) when it is in-vocabulary.
struct TokenPoolMember {
  std::string word;
  TokenId token = special::kUnk;
  double similarity = 1.0;
};

struct TokenPool {
  std::string keyword;
  TokenId keyword_token = special::kUnk;  // <unk> when out of vocabulary
  std::vector<TokenPoolMember> members;
  std::size_t dropped = 0;  // out-of-vocabulary pool members removed
};

// Multi-word keywords are reduced to their first token.
TokenPool resolve_pool(const SimilarityPool& pool, const Vocabulary& vocab);
TokenPool resolve_keyword(const std::string& keyword, const Vocabulary& vocab);

enum class KeywordLossMode { plain, sim_weighted, sim_unit, multi };
enum class PoolWeighting { none, similarity, unit };

struct KeywordSpec {
  KeywordLossMode mode = KeywordLossMode::plain;
  PoolWeighting multi_weighting = PoolWeighting::none;  // multi mode only
  std::vector<TokenPool> keywords;
  void validate() const;
};

// One (timestep, token) selection through which the subgradient flows.
struct KeywordSelection {
  std::string keyword;
  std::string chosen;
  TokenId token = special::kUnk;
  int timestep = -1;
  double weight = 0.0;
  double loss = 0.0;
  bool skipped = false;
};

template <typename T>
struct MinNll {
  T loss = T(0);
  int timestep = -1;
};

template <typename T>
struct KeywordLoss {
  T loss = T(0);
  std::vector<KeywordSelection> selections;
  std::size_t skipped = 0;
};

template <typename T>
T lm_loss(const Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask);

// Adds scale * d lm_loss / d logits into dlogits.
template <typename T>
void lm_loss_grad(const Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                  T scale, Matrix<T>& dlogits);

template <typename T>
T cls_loss(std::span<const T> scores, std::size_t true_index);

template <typename T>
std::vector<T> cls_loss_grad(std::span<const T> scores, std::size_t true_index);

// min over masked rows of -log p_i(kw); ties resolve to the earliest row.
template <typename T>
MinNll<T> keyword_min_nll(const LogitRows<T>& rows, std::span<const std::uint8_t> mask, TokenId kw);
template <typename T>
MinNll<T> keyword_min_nll(const Matrix<T>& logits, std::span<const std::uint8_t> mask, TokenId kw);

// Pool minimum scaled by sim(k, kw) (or 1 when unit_sim). Pool ties resolve
// to the keyword itself, then the lexicographically first word. An empty
// pool yields a skipped selection with zero loss.
template <typename T>
KeywordSelection keyword_sim_loss(const LogitRows<T>& rows, std::span<const std::uint8_t> mask,
                                  const TokenPool& pool, bool unit_sim);
template <typename T>
KeywordSelection keyword_sim_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask,
                                  const TokenPool& pool, bool unit_sim);

template <typename T>
KeywordLoss<T> multi_keyword_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask,
                                  const KeywordSpec& spec);

// Dispatches on spec.mode.
template <typename T>
KeywordLoss<T> keyword_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask, const KeywordSpec& spec);

// Adds scale * d L_k / d logits (subgradient through the selected pairs).
template <typename T>
void keyword_loss_grad(const Matrix<T>& logits, const KeywordLoss<T>& loss, T scale, Matrix<T>& dlogits);

struct LossBreakdown {
  double lm = 0.0;
  double cls = 0.0;
  double keyword = 0.0;
  double total = 0.0;
  std::vector<KeywordSelection> selections;
};

// total = alpha * lm + beta * cls + gamma * keyword. Throws NonFiniteLoss
// naming the first non-finite component ("L_m", "L_n" or "L_k").
LossBreakdown total_loss(double lm, double cls, double keyword, const LossWeights& weights);

}  // namespace kwdial
