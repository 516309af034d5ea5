#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kwdial/corpus.hpp"
#include "kwdial/decode.hpp"
#include "kwdial/embeddings.hpp"
#include "kwdial/model.hpp"
#include "kwdial/model_class.hpp"

namespace kwdial {

struct KiaResult {
  double kia = 0.0;
  double sim_kia = 0.0;
  std::size_t counted = 0;
  std::size_t excluded = 0;  // items with an empty keyword set
};

// Exact token match after split_words normalization; an item is a hit only
// when every keyword is present. sim_kia also accepts any pool member.
KiaResult kia(std::span<const std::string> responses, std::span<const std::vector<std::string>> keywords,
              const PoolLookup& pools = {});

struct DiversityResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // lists with fewer than two in-table keywords
};

// Mean over lists of the mean pairwise cosine (each clamped to [0,1]).
DiversityResult keyword_diversity(std::span<const std::vector<std::string>> suggestions,
                                  const EmbeddingTable& table);

double response_similarity(const std::string& generated, const std::string& reference,
                           const EmbeddingTable& table);

double distinct_n(std::span<const std::string> responses, int n);

// exp of the token-weighted mean NLL of each response (and its <eos>) under
// the reference LM with an empty context and keyword block.
template <typename T>
double perplexity(std::span<const std::vector<TokenId>> responses, const Transformer<T>& reference);

struct EvalConfig {
  DecodeConfig decode;  // nucleus, top_p 0.9 by default
  std::size_t limit = 0;  // 0 = all test examples
  int threads = 1;
};

struct EvalRow {
  std::string name;
  std::size_t examples = 0;
  double kia = 0.0;
  double sim_kia = 0.0;
  double similarity = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::optional<double> ppl;
  std::optional<double> keyword_diversity;
  std::size_t kia_excluded = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_json;  // echo of the evaluation settings
  std::string corpus_fingerprint;

  std::string to_json() const;
  std::string to_table() const;
};

// Decodes one response per example; example i samples with seed config.seed + i
// so results do not depend on the thread count.
EvalRow evaluate_model(const std::string& name, const Transformer<float>& model, const ModelClass& cls,
                       std::span<const DialogExample> test, const Vocabulary& vocab, const EvalConfig& config,
                       const EmbeddingTable& table, const Transformer<float>* reference_lm,
                       const PoolLookup& pools, std::vector<std::string>* generations = nullptr);

// FNV-1a over the token ids and keywords of the test examples.
std::string corpus_fingerprint(std::span<const DialogExample> examples);

}  // namespace kwdial
