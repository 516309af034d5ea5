#include "kwdial/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kwdial/error.hpp"

namespace kwdial {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int step_budget(const DecoderSession& s, const DecodeConfig& c) {
  return std::min(c.max_new_tokens, s.remaining_capacity());
}

Generation finalize(std::vector<TokenId> tokens, double log_prob, bool finished, int group) {
  Generation g;
  g.tokens = std::move(tokens);
  g.log_prob = log_prob;
  g.finished = finished;
  g.group = group;
  const auto len = g.tokens.size() + (finished ? 1 : 0);
  g.score = len == 0 ? 0.0 : log_prob / static_cast<double>(len);
  return g;
}

}  // namespace

void DecodeConfig::validate() const {
  if (!(top_p > 0.0) || top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
  if (beams < 1 || groups < 1) throw ConfigError("beams and groups must be positive");
  if (beams < groups) throw ConfigError("beams must be at least groups");
  if (beams % groups != 0) throw ConfigError("groups must divide beams");
  if (diversity_penalty < 0.0) throw ConfigError("diversity penalty must be non-negative");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

std::vector<double> log_softmax(std::span<const float> logits, double temperature) {
  std::vector<double> out(logits.size());
  double m = kNegInf;
  for (auto v : logits) m = std::max(m, static_cast<double>(v) / temperature);
  if (!std::isfinite(m)) throw ConfigError("no admissible token in logits");
  double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(logits[i]) / temperature - m;
    s += std::exp(out[i]);
  }
  const double lse = std::log(s);
  for (auto& v : out) v -= lse;
  return out;
}

// ---- TransformerSession -------------------------------------------------------------

TransformerSession::TransformerSession(const Transformer<float>& model,
                                       std::span<const std::vector<TokenId>> context,
                                       std::span<const TokenId> keywords, int max_new_tokens,
                                       ResponseOpener opener)
    : model_(&model) {
  const int max_len = model.config().max_len;
  if (max_new_tokens < 1 || max_new_tokens >= max_len) {
    throw ConfigError("max_new_tokens must be in [1, max_len)");
  }
  EncodeOptions opts;
  opts.max_len = max_len - max_new_tokens;
  opts.close_response = false;
  opts.opener = opener;
  prompt_ = encode_example(context, {}, keywords, opts);
  state_ = model.start(static_cast<int>(prompt_.size()) + max_new_tokens);
  RowVector<float> row;
  for (std::size_t i = 0; i < prompt_.size(); ++i) row = model.step(state_, prompt_.tokens[i], prompt_.states[i]);
  set_logits(row);
}

void TransformerSession::set_logits(const RowVector<float>& row) {
  logits_.assign(row.data(), row.data() + row.size());
  for (TokenId t = 0; t < special::kCount; ++t) {
    if (t != special::kEos) logits_[static_cast<std::size_t>(t)] = -std::numeric_limits<float>::infinity();
  }
}

std::unique_ptr<DecoderSession> TransformerSession::clone() const {
  return std::make_unique<TransformerSession>(*this);
}

std::span<const float> TransformerSession::next_logits() const { return logits_; }

void TransformerSession::append(TokenId token) { set_logits(model_->step(state_, token, InputState::speaker2)); }

int TransformerSession::remaining_capacity() const {
  return static_cast<int>(state_.keys.front().rows()) - state_.length;
}

// ---- nucleus / greedy ---------------------------------------------------------------

NucleusChoice nucleus_select(std::span<const double> probs, double top_p, double u,
                             std::vector<TokenId>* nucleus) {
  std::vector<TokenId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  double cum = 0.0;
  std::size_t size = 0;
  for (; size < order.size();) {
    cum += probs[static_cast<std::size_t>(order[size])];
    ++size;
    if (cum >= top_p) break;
  }
  // Zero-probability tokens never enter the nucleus.
  while (size > 1 && probs[static_cast<std::size_t>(order[size - 1])] <= 0.0) --size;
  double mass = 0.0;
  for (std::size_t i = 0; i < size; ++i) mass += probs[static_cast<std::size_t>(order[i])];
  const double target = u * mass;
  double acc = 0.0;
  TokenId chosen = order[size - 1];
  for (std::size_t i = 0; i < size; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (target < acc) {
      chosen = order[i];
      break;
    }
  }
  if (nucleus) nucleus->assign(order.begin(), order.begin() + static_cast<long>(size));
  return {chosen, size};
}

Generation greedy_decode(const DecoderSession& start, const DecodeConfig& config) {
  config.validate();
  auto session = start.clone();
  std::vector<TokenId> out;
  double lp = 0.0;
  const int budget = step_budget(*session, config);
  for (int step = 0; step < budget; ++step) {
    auto logp = log_softmax(session->next_logits(), config.temperature);
    auto best = static_cast<TokenId>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    lp += logp[static_cast<std::size_t>(best)];
    if (best == session->end_token()) return finalize(std::move(out), lp, true, 0);
    out.push_back(best);
    if (step + 1 < budget) session->append(best);
  }
  return finalize(std::move(out), lp, false, 0);
}

Generation nucleus_sample(const DecoderSession& start, const DecodeConfig& config, const NucleusObserver& observer) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  auto session = start.clone();
  std::vector<TokenId> out;
  std::vector<TokenId> nucleus;
  double lp = 0.0;
  const int budget = step_budget(*session, config);
  for (int step = 0; step < budget; ++step) {
    auto logp = log_softmax(session->next_logits(), config.temperature);
    std::vector<double> probs(logp.size());
    for (std::size_t i = 0; i < logp.size(); ++i) probs[i] = std::exp(logp[i]);
    auto choice = nucleus_select(probs, config.top_p, uniform01(rng), observer ? &nucleus : nullptr);
    if (observer) observer(nucleus, choice.token);
    lp += logp[static_cast<std::size_t>(choice.token)];
    if (choice.token == session->end_token()) return finalize(std::move(out), lp, true, 0);
    out.push_back(choice.token);
    if (step + 1 < budget) session->append(choice.token);
  }
  return finalize(std::move(out), lp, false, 0);
}

// ---- diverse beam search -----------------------------------------------------------

namespace {

struct Hypothesis {
  std::unique_ptr<DecoderSession> session;
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
};

struct Candidate {
  double penalized = 0.0;
  double log_prob = 0.0;
  std::size_t parent = 0;
  TokenId token = 0;
};

}  // namespace

std::vector<Generation> diverse_beam_search(const DecoderSession& start, const DecodeConfig& config) {
  config.validate();
  const int groups = config.groups;
  const auto per_group = static_cast<std::size_t>(config.beams / config.groups);
  const int budget = step_budget(start, config);
  const TokenId end = start.end_token();
  const std::size_t vocab = start.next_logits().size();

  std::vector<std::vector<Hypothesis>> active(static_cast<std::size_t>(groups));
  std::vector<std::vector<Generation>> finished(static_cast<std::size_t>(groups));
  for (auto& g : active) g.push_back({start.clone(), {}, 0.0});

  std::vector<int> chosen_count(vocab, 0);
  for (int step = 0; step < budget; ++step) {
    std::fill(chosen_count.begin(), chosen_count.end(), 0);
    bool any_active = false;
    for (int g = 0; g < groups; ++g) {
      auto& hyps = active[static_cast<std::size_t>(g)];
      auto& done = finished[static_cast<std::size_t>(g)];
      if (hyps.empty() || done.size() >= per_group) continue;

      std::vector<Candidate> cands;
      cands.reserve(hyps.size() * vocab);
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        auto logp = log_softmax(hyps[h].session->next_logits(), config.temperature);
        for (std::size_t v = 0; v < vocab; ++v) {
          if (!std::isfinite(logp[v])) continue;
          const double total = hyps[h].log_prob + logp[v];
          cands.push_back({total - config.diversity_penalty * chosen_count[v], total, h, static_cast<TokenId>(v)});
        }
      }
      const std::size_t keep = std::min(cands.size(), 2 * per_group);
      auto better = [](const Candidate& a, const Candidate& b) {
        if (a.penalized != b.penalized) return a.penalized > b.penalized;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      };
      std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(), better);
      cands.resize(keep);

      std::vector<Candidate> next;
      for (std::size_t rank = 0; rank < cands.size() && next.size() < per_group; ++rank) {
        const auto& c = cands[rank];
        if (c.token == end) {
          if (rank < per_group && done.size() < per_group) {
            done.push_back(finalize(hyps[c.parent].tokens, c.log_prob, true, g));
            ++chosen_count[static_cast<std::size_t>(c.token)];
          }
          continue;
        }
        next.push_back(c);
      }
      for (const auto& c : next) ++chosen_count[static_cast<std::size_t>(c.token)];

      // Move a parent's session into its last child; clone for the others.
      std::vector<int> children(hyps.size(), 0);
      for (const auto& c : next) ++children[c.parent];
      std::vector<Hypothesis> grown;
      grown.reserve(next.size());
      const bool last_step = step + 1 >= budget;
      for (const auto& c : next) {
        Hypothesis nh;
        auto& parent = hyps[c.parent];
        nh.session = --children[c.parent] == 0 ? std::move(parent.session) : parent.session->clone();
        nh.tokens = parent.tokens;
        nh.tokens.push_back(c.token);
        nh.log_prob = c.log_prob;
        if (!last_step) nh.session->append(c.token);
        grown.push_back(std::move(nh));
      }
      hyps = std::move(grown);
      if (!hyps.empty() && done.size() < per_group) any_active = true;
    }
    if (!any_active) break;
  }

  std::vector<Generation> out;
  for (int g = 0; g < groups; ++g) {
    auto& done = finished[static_cast<std::size_t>(g)];
    for (auto& h : active[static_cast<std::size_t>(g)]) {
      if (done.size() >= per_group) break;
      done.push_back(finalize(h.tokens, h.log_prob, false, g));
    }
    std::stable_sort(done.begin(), done.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (done.size() > per_group) done.resize(per_group);
    for (auto& d : done) out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

std::vector<Generation> decode(const DecoderSession& start, const DecodeConfig& config) {
  switch (config.strategy) {
    case DecodeStrategy::greedy:
      return {greedy_decode(start, config)};
    case DecodeStrategy::nucleus:
      return {nucleus_sample(start, config)};
    case DecodeStrategy::diverse_beam:
      return diverse_beam_search(start, config);
  }
  return {};
}

}  // namespace kwdial
