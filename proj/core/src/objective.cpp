#include "kwdial/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {
namespace {

void check_mask(std::span<const std::uint8_t> mask, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(mask.size()) != rows) throw ConfigError("mask length differs from logits rows");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw ConfigError("empty mask");
  }
}

TokenId first_token(const std::string& word, const Vocabulary& vocab) {
  auto words = split_words(word);
  if (words.empty()) return special::kUnk;
  return vocab.id(words.front());
}

template <typename T>
MinNll<T> min_nll_impl(const LogitRows<T>& rows, std::span<const std::uint8_t> mask, TokenId kw) {
  MinNll<T> best{std::numeric_limits<T>::infinity(), -1};
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    T nll = -rows.log_prob(static_cast<Eigen::Index>(t), kw);
    if (nll < best.loss) best = {nll, static_cast<int>(t)};
  }
  return best;
}

}  // namespace

template <typename T>
LogitRows<T>::LogitRows(const Matrix<T>& logits)
    : logits_(logits), lse_(static_cast<std::size_t>(logits.rows())), ready_(static_cast<std::size_t>(logits.rows()), 0) {}

template <typename T>
T LogitRows<T>::log_normalizer(Eigen::Index row) const {
  auto r = static_cast<std::size_t>(row);
  if (!ready_[r]) {
    T m = logits_.row(row).maxCoeff();
    lse_[r] = m + std::log((logits_.row(row).array() - m).exp().sum());
    ready_[r] = 1;
  }
  return lse_[r];
}

template <typename T>
T LogitRows<T>::log_prob(Eigen::Index row, TokenId token) const {
  if (token < 0 || token >= logits_.cols()) throw ConfigError("keyword token id out of range");
  return logits_(row, token) - log_normalizer(row);
}

TokenPool resolve_keyword(const std::string& keyword, const Vocabulary& vocab) {
  SimilarityPool p;
  p.keyword = keyword;
  p.members.push_back({keyword, 1.0});
  return resolve_pool(p, vocab);
}

TokenPool resolve_pool(const SimilarityPool& pool, const Vocabulary& vocab) {
  TokenPool out;
  out.keyword = pool.keyword;
  out.keyword_token = first_token(pool.keyword, vocab);
  if (out.keyword_token != special::kUnk) out.members.push_back({pool.keyword, out.keyword_token, 1.0});
  std::vector<TokenPoolMember> others;
  for (const auto& m : pool.members) {
    if (m.word == pool.keyword) continue;
    auto tok = first_token(m.word, vocab);
    if (tok == special::kUnk || tok == out.keyword_token ||
        std::any_of(others.begin(), others.end(), [&](const auto& o) { return o.token == tok; })) {
      ++out.dropped;
      continue;
    }
    others.push_back({m.word, tok, std::clamp(m.similarity, 0.0, 1.0)});
  }
  std::sort(others.begin(), others.end(), [](const auto& a, const auto& b) { return a.word < b.word; });
  out.members.insert(out.members.end(), others.begin(), others.end());
  return out;
}

void KeywordSpec::validate() const {
  if (mode == KeywordLossMode::multi) {
    if (keywords.empty()) throw ConfigError("multi-keyword spec needs at least one keyword");
  } else if (keywords.size() != 1) {
    throw ConfigError("single-keyword loss modes take exactly one keyword");
  }
}

template <typename T>
T lm_loss(const Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  check_mask(mask, logits.rows());
  LogitRows<T> rows(logits);
  T sum = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    sum -= rows.log_prob(static_cast<Eigen::Index>(t), targets[t]);
    ++n;
  }
  return sum / static_cast<T>(n);
}

template <typename T>
void lm_loss_grad(const Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                  T scale, Matrix<T>& dlogits) {
  check_mask(mask, logits.rows());
  if (dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols()) {
    dlogits = Matrix<T>::Zero(logits.rows(), logits.cols());
  }
  const auto n = static_cast<T>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  LogitRows<T> rows(logits);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    const auto r = static_cast<Eigen::Index>(t);
    const T lse = rows.log_normalizer(r);
    dlogits.row(r) += (scale / n) * (logits.row(r).array() - lse).exp().matrix();
    dlogits(r, targets[t]) -= scale / n;
  }
}

template <typename T>
T cls_loss(std::span<const T> scores, std::size_t true_index) {
  if (scores.size() < 2) throw ConfigError("classification needs at least two candidates");
  if (true_index >= scores.size()) throw ConfigError("true candidate index out of range");
  T m = *std::max_element(scores.begin(), scores.end());
  T s = 0;
  for (auto v : scores) s += std::exp(v - m);
  return -(scores[true_index] - m - std::log(s));
}

template <typename T>
std::vector<T> cls_loss_grad(std::span<const T> scores, std::size_t true_index) {
  if (scores.size() < 2) throw ConfigError("classification needs at least two candidates");
  if (true_index >= scores.size()) throw ConfigError("true candidate index out of range");
  T m = *std::max_element(scores.begin(), scores.end());
  std::vector<T> g(scores.size());
  T s = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += (g[i] = std::exp(scores[i] - m));
  for (auto& v : g) v /= s;
  g[true_index] -= T(1);
  return g;
}

template <typename T>
MinNll<T> keyword_min_nll(const LogitRows<T>& rows, std::span<const std::uint8_t> mask, TokenId kw) {
  check_mask(mask, rows.logits().rows());
  return min_nll_impl(rows, mask, kw);
}

template <typename T>
MinNll<T> keyword_min_nll(const Matrix<T>& logits, std::span<const std::uint8_t> mask, TokenId kw) {
  LogitRows<T> rows(logits);
  return keyword_min_nll(rows, mask, kw);
}

template <typename T>
KeywordSelection keyword_sim_loss(const LogitRows<T>& rows, std::span<const std::uint8_t> mask,
                                  const TokenPool& pool, bool unit_sim) {
  check_mask(mask, rows.logits().rows());
  KeywordSelection sel;
  sel.keyword = pool.keyword;
  if (pool.members.empty()) {
    sel.skipped = true;
    return sel;
  }
  // Visit the keyword first, then the rest lexicographically, so strict
  // improvement implements the tie rule whatever order the pool arrives in.
  std::vector<const TokenPoolMember*> order;
  order.reserve(pool.members.size());
  for (const auto& m : pool.members) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(), [&](const TokenPoolMember* a, const TokenPoolMember* b) {
    const bool ka = a->word == pool.keyword, kb = b->word == pool.keyword;
    if (ka != kb) return ka;
    return a->word < b->word;
  });
  MinNll<T> best{std::numeric_limits<T>::infinity(), -1};
  const TokenPoolMember* chosen = nullptr;
  for (const auto* mp : order) {
    const auto& m = *mp;
    auto r = min_nll_impl(rows, mask, m.token);
    if (r.loss < best.loss) {
      best = r;
      chosen = &m;
    }
  }
  if (!chosen) chosen = &pool.members.front();
  sel.chosen = chosen->word;
  sel.token = chosen->token;
  sel.timestep = best.timestep;
  sel.weight = unit_sim ? 1.0 : chosen->similarity;
  sel.loss = static_cast<double>(static_cast<T>(sel.weight) * best.loss);
  return sel;
}

template <typename T>
KeywordSelection keyword_sim_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask,
                                  const TokenPool& pool, bool unit_sim) {
  LogitRows<T> rows(logits);
  return keyword_sim_loss(rows, mask, pool, unit_sim);
}

namespace {

template <typename T>
KeywordSelection plain_selection(const LogitRows<T>& rows, std::span<const std::uint8_t> mask, const TokenPool& pool) {
  KeywordSelection sel;
  sel.keyword = pool.keyword;
  if (pool.keyword_token == special::kUnk) {
    sel.skipped = true;
    return sel;
  }
  auto r = keyword_min_nll(rows, mask, pool.keyword_token);
  sel.chosen = pool.keyword;
  sel.token = pool.keyword_token;
  sel.timestep = r.timestep;
  sel.weight = 1.0;
  sel.loss = static_cast<double>(r.loss);
  return sel;
}

template <typename T>
KeywordSelection select_one(const LogitRows<T>& rows, std::span<const std::uint8_t> mask, const TokenPool& pool,
                            PoolWeighting weighting) {
  switch (weighting) {
    case PoolWeighting::none:
      return plain_selection(rows, mask, pool);
    case PoolWeighting::similarity:
      return keyword_sim_loss(rows, mask, pool, false);
    case PoolWeighting::unit:
      return keyword_sim_loss(rows, mask, pool, true);
  }
  return {};
}

// Recomputes the selected loss in T so sums are exact in the working precision.
template <typename T>
T selection_loss(const LogitRows<T>& rows, const KeywordSelection& s) {
  if (s.skipped) return T(0);
  return static_cast<T>(s.weight) * -rows.log_prob(s.timestep, s.token);
}

}  // namespace

template <typename T>
KeywordLoss<T> multi_keyword_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask,
                                  const KeywordSpec& spec) {
  if (spec.keywords.empty()) throw ConfigError("multi-keyword loss needs at least one keyword");
  check_mask(mask, logits.rows());
  LogitRows<T> rows(logits);
  KeywordLoss<T> out;
  for (const auto& pool : spec.keywords) {
    auto sel = select_one(rows, mask, pool, spec.multi_weighting);
    if (sel.skipped) {
      ++out.skipped;
    } else {
      out.loss += selection_loss(rows, sel);
    }
    out.selections.push_back(std::move(sel));
  }
  return out;
}

template <typename T>
KeywordLoss<T> keyword_loss(const Matrix<T>& logits, std::span<const std::uint8_t> mask, const KeywordSpec& spec) {
  spec.validate();
  if (spec.mode == KeywordLossMode::multi) return multi_keyword_loss(logits, mask, spec);
  check_mask(mask, logits.rows());
  LogitRows<T> rows(logits);
  const auto weighting = spec.mode == KeywordLossMode::plain          ? PoolWeighting::none
                         : spec.mode == KeywordLossMode::sim_weighted ? PoolWeighting::similarity
                                                                      : PoolWeighting::unit;
  KeywordLoss<T> out;
  auto sel = select_one(rows, mask, spec.keywords.front(), weighting);
  if (sel.skipped) {
    out.skipped = 1;
  } else {
    out.loss = selection_loss(rows, sel);
  }
  out.selections.push_back(std::move(sel));
  return out;
}

template <typename T>
void keyword_loss_grad(const Matrix<T>& logits, const KeywordLoss<T>& loss, T scale, Matrix<T>& dlogits) {
  if (dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols()) {
    dlogits = Matrix<T>::Zero(logits.rows(), logits.cols());
  }
  LogitRows<T> rows(logits);
  for (const auto& s : loss.selections) {
    if (s.skipped || s.weight == 0.0) continue;
    const T w = scale * static_cast<T>(s.weight);
    const Eigen::Index r = s.timestep;
    const T lse = rows.log_normalizer(r);
    dlogits.row(r) += w * (logits.row(r).array() - lse).exp().matrix();
    dlogits(r, s.token) -= w;
  }
}

LossBreakdown total_loss(double lm, double cls, double keyword, const LossWeights& w) {
  if (!std::isfinite(lm)) throw NonFiniteLoss("L_m", "non-finite language-model loss L_m");
  if (!std::isfinite(cls)) throw NonFiniteLoss("L_n", "non-finite next-utterance loss L_n");
  if (!std::isfinite(keyword)) throw NonFiniteLoss("L_k", "non-finite keyword loss L_k");
  LossBreakdown b;
  b.lm = lm;
  b.cls = cls;
  b.keyword = keyword;
  b.total = w.alpha * lm + w.beta * cls + w.gamma * keyword;
  return b;
}

#define KWDIAL_INSTANTIATE_OBJECTIVE(T)                                                                         \
  template class LogitRows<T>;                                                                                  \
  template T lm_loss<T>(const Matrix<T>&, std::span<const TokenId>, std::span<const std::uint8_t>);              \
  template void lm_loss_grad<T>(const Matrix<T>&, std::span<const TokenId>, std::span<const std::uint8_t>, T,     \
                                Matrix<T>&);                                                                     \
  template T cls_loss<T>(std::span<const T>, std::size_t);                                                       \
  template std::vector<T> cls_loss_grad<T>(std::span<const T>, std::size_t);                                     \
  template MinNll<T> keyword_min_nll<T>(const LogitRows<T>&, std::span<const std::uint8_t>, TokenId);            \
  template MinNll<T> keyword_min_nll<T>(const Matrix<T>&, std::span<const std::uint8_t>, TokenId);               \
  template KeywordSelection keyword_sim_loss<T>(const LogitRows<T>&, std::span<const std::uint8_t>,              \
                                                const TokenPool&, bool);                                         \
  template KeywordSelection keyword_sim_loss<T>(const Matrix<T>&, std::span<const std::uint8_t>,                 \
                                                const TokenPool&, bool);                                         \
  template KeywordLoss<T> multi_keyword_loss<T>(const Matrix<T>&, std::span<const std::uint8_t>,                 \
                                                const KeywordSpec&);                                             \
  template KeywordLoss<T> keyword_loss<T>(const Matrix<T>&, std::span<const std::uint8_t>, const KeywordSpec&);  \
  template void keyword_loss_grad<T>(const Matrix<T>&, const KeywordLoss<T>&, T, Matrix<T>&);

KWDIAL_INSTANTIATE_OBJECTIVE(float)
KWDIAL_INSTANTIATE_OBJECTIVE(double)

}  // namespace kwdial
