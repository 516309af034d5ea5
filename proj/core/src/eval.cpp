#include "kwdial/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kwdial/error.hpp"
#include "kwdial/objective.hpp"
#include "kwdial/text.hpp"

namespace kwdial {

namespace {

bool contains_phrase(const std::vector<std::string>& tokens, const std::string& phrase) {
  auto words = split_words(phrase);
  if (words.empty()) return false;
  return std::search(tokens.begin(), tokens.end(), words.begin(), words.end()) != tokens.end();
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

KiaResult kia(std::span<const std::string> responses, std::span<const std::vector<std::string>> keywords,
              const PoolLookup& pools) {
  if (responses.size() != keywords.size()) {
    throw ConfigError("kia: " + std::to_string(responses.size()) + " responses vs " +
                      std::to_string(keywords.size()) + " keyword sets");
  }
  KiaResult r;
  std::size_t hits = 0, sim_hits = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (keywords[i].empty()) {
      ++r.excluded;
      continue;
    }
    ++r.counted;
    const auto tokens = split_words(responses[i]);
    bool all = true, all_sim = true;
    for (const auto& kw : keywords[i]) {
      const bool hit = contains_phrase(tokens, kw);
      all = all && hit;
      bool sim_hit = hit;
      if (!sim_hit && pools) {
        for (const auto& m : pools(kw).members) {
          if (contains_phrase(tokens, m.word)) {
            sim_hit = true;
            break;
          }
        }
      }
      all_sim = all_sim && sim_hit;
    }
    hits += all;
    sim_hits += all_sim;
  }
  if (r.counted) {
    r.kia = static_cast<double>(hits) / static_cast<double>(r.counted);
    r.sim_kia = static_cast<double>(sim_hits) / static_cast<double>(r.counted);
  }
  return r;
}

DiversityResult keyword_diversity(std::span<const std::vector<std::string>> suggestions,
                                  const EmbeddingTable& table) {
  DiversityResult r;
  double sum = 0.0;
  for (const auto& list : suggestions) {
    std::vector<std::span<const float>> vecs;
    for (const auto& w : list) {
      if (auto v = table.lookup(w)) vecs.push_back(*v);
    }
    if (vecs.size() < 2) {
      ++r.excluded;
      continue;
    }
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      for (std::size_t j = i + 1; j < vecs.size(); ++j) {
        s += clamp01(cosine(vecs[i], vecs[j]));
        ++pairs;
      }
    }
    sum += s / static_cast<double>(pairs);
    ++r.used;
  }
  if (r.used == 0) throw ConfigError("keyword_diversity: no list has two in-table keywords");
  r.value = sum / static_cast<double>(r.used);
  return r;
}

double response_similarity(const std::string& generated, const std::string& reference,
                           const EmbeddingTable& table) {
  auto g = text_centroid(split_words(generated), table);
  auto r = text_centroid(split_words(reference), table);
  return clamp01(cosine(g, r));
}

double distinct_n(std::span<const std::string> responses, int n) {
  if (n < 1) throw ConfigError("distinct_n: n must be >= 1");
  std::set<std::vector<std::string>> seen;
  std::size_t total = 0;
  for (const auto& resp : responses) {
    auto tokens = split_words(resp);
    if (tokens.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      seen.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  if (total == 0) throw ConfigError("distinct_n: every response is shorter than n=" + std::to_string(n));
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

template <typename T>
double perplexity(std::span<const std::vector<TokenId>> responses, const Transformer<T>& reference) {
  if (responses.empty()) throw ConfigError("perplexity: no responses");
  const int max_len = reference.config().max_len;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& resp : responses) {
    const std::size_t room = static_cast<std::size_t>(max_len) - 5;
    std::span<const TokenId> r(resp.data(), std::min(resp.size(), room));
    EncodeOptions opts;
    opts.max_len = max_len;
    auto in = encode_example({}, r, {}, opts);
    auto fwd = reference.forward(in);
    LogitRows<T> rows(fwd.logits);
    for (std::size_t t = 0; t < in.size(); ++t) {
      if (!in.lm_mask[t]) continue;
      nll -= static_cast<double>(rows.log_prob(static_cast<Eigen::Index>(t), in.targets[t]));
      ++tokens;
    }
  }
  return std::exp(nll / static_cast<double>(tokens));
}

template double perplexity<float>(std::span<const std::vector<TokenId>>, const Transformer<float>&);
template double perplexity<double>(std::span<const std::vector<TokenId>>, const Transformer<double>&);

std::string corpus_fingerprint(std::span<const DialogExample> examples) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& ex : examples) {
    mix(ex.context.size());
    for (const auto& turn : ex.context) {
      mix(turn.size());
      for (auto t : turn) mix(static_cast<std::uint64_t>(t));
    }
    mix(ex.response.size());
    for (auto t : ex.response) mix(static_cast<std::uint64_t>(t));
    for (const auto& k : ex.keywords) {
      for (unsigned char c : k) mix(c);
      mix(0xffff);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalRow evaluate_model(const std::string& name, const Transformer<float>& model, const ModelClass& cls,
                       std::span<const DialogExample> test, const Vocabulary& vocab, const EvalConfig& config,
                       const EmbeddingTable& table, const Transformer<float>* reference_lm,
                       const PoolLookup& pools, std::vector<std::string>* generations) {
  config.decode.validate();
  const std::size_t n = config.limit ? std::min(config.limit, test.size()) : test.size();
  if (n == 0) throw ConfigError("evaluate_model: no test examples");

  std::vector<std::vector<TokenId>> generated(n);
  auto run = [&](std::size_t i) {
    const auto& ex = test[i];
    auto kws = vocab.encode(keyword_block(ex, cls));
    TransformerSession session(model, ex.context, kws, config.decode.max_new_tokens);
    DecodeConfig dc = config.decode;
    dc.seed = config.decode.seed + i;
    generated[i] = decode(session, dc).front().tokens;
  };
  const int threads = std::max(1, config.threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(threads)) run(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<std::string> texts(n), references(n);
  std::vector<std::vector<std::string>> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    texts[i] = vocab.detokenize(generated[i]);
    references[i] = vocab.detokenize(test[i].response);
    targets[i] = kia_targets(test[i], cls);
  }

  EvalRow row;
  row.name = name;
  row.examples = n;
  auto k = kia(texts, targets, pools);
  row.kia = k.kia;
  row.sim_kia = k.sim_kia;
  row.kia_excluded = k.excluded;
  double sim = 0.0;
  for (std::size_t i = 0; i < n; ++i) sim += response_similarity(texts[i], references[i], table);
  row.similarity = sim / static_cast<double>(n);
  auto safe_distinct = [&](int order) {
    try {
      return distinct_n(texts, order);
    } catch (const ConfigError&) {
      return 0.0;
    }
  };
  row.distinct1 = safe_distinct(1);
  row.distinct2 = safe_distinct(2);
  if (reference_lm) row.ppl = perplexity<float>(generated, *reference_lm);
  if (generations) *generations = std::move(texts);
  return row;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["corpus_fingerprint"] = corpus_fingerprint;
  j["config"] = config_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(config_json);
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["model"] = r.name;
    o["examples"] = r.examples;
    o["kia"] = r.kia;
    o["sim_kia"] = r.sim_kia;
    o["similarity"] = r.similarity;
    o["distinct_1"] = r.distinct1;
    o["distinct_2"] = r.distinct2;
    o["ppl"] = r.ppl ? nlohmann::ordered_json(*r.ppl) : nlohmann::ordered_json();
    if (r.keyword_diversity) o["keyword_diversity"] = *r.keyword_diversity;
    o["kia_excluded"] = r.kia_excluded;
    j["rows"].push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  const std::vector<std::string> head = {"Model", "KIA", "Sim-KIA", "Similarity", "Distinct-1", "Distinct-2", "PPL"};
  std::vector<std::vector<std::string>> cells;
  auto fmt = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  for (const auto& r : rows) {
    cells.push_back({r.name, fmt(r.kia, 3), fmt(r.sim_kia, 3), fmt(r.similarity, 3), fmt(r.distinct1, 3),
                     fmt(r.distinct2, 3), r.ppl ? fmt(*r.ppl, 3) : "-"});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << "\n";
  };
  line(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
  for (const auto& row : cells) line(row);
  return out.str();
}

}  // namespace kwdial
