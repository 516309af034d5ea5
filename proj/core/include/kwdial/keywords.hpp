#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kwdial/corpus.hpp"
#include "kwdial/decode.hpp"
#include "kwdial/embeddings.hpp"
#include "kwdial/model.hpp"
#include "kwdial/vocab.hpp"

namespace kwdial {

enum class SuggestionSource { extractive, generative, human };

std::string to_string(SuggestionSource source);

struct KeywordSuggestion {
  std::string text;
  SuggestionSource source = SuggestionSource::extractive;
  double score = 0.0;
};

// A single lowercase token that is a content word.
bool is_valid_keyword(std::string_view word);

// Distinct in-table content words of text scored by cosine to the text
// centroid; top-k, ties lexicographic.
std::vector<KeywordSuggestion> extract_keywords(std::string_view text, const EmbeddingTable& table,
                                                std::size_t k);

// Adapter for build_example_records.
KeywordExtractor make_extractor(const EmbeddingTable& table, std::size_t k = kMaxKeywords);

struct SuggestConfig {
  DecodeConfig decode = [] {
    DecodeConfig d;
    d.strategy = DecodeStrategy::diverse_beam;
    d.max_new_tokens = 30;
    return d;
  }();
  std::size_t top = 3;
};

// Diverse beams from the keywordless model, keywords extracted from each
// beam and merged by maximum score.
std::vector<KeywordSuggestion> extractive_suggest(std::span<const std::vector<TokenId>> context,
                                                  const Transformer<float>& base, const Vocabulary& vocab,
                                                  const SuggestConfig& config, const EmbeddingTable& table,
                                                  std::vector<std::string>* beams = nullptr);

// "dog , park" -> {"dog", "park"}; pieces that are not a single valid
// keyword are dropped.
std::vector<std::string> parse_keyword_list(std::string_view text);

// Diverse beams from the keyword predictor; keywords taken in beam-score order.
std::vector<KeywordSuggestion> generative_suggest(std::span<const std::vector<TokenId>> context,
                                                  const Transformer<float>& predictor, const Vocabulary& vocab,
                                                  const SuggestConfig& config,
                                                  std::vector<std::string>* beams = nullptr);

// Generative suggestions first, then extractive ones; a word suggested by
// both keeps its generative entry.
std::vector<KeywordSuggestion> merge_suggestions(std::span<const KeywordSuggestion> generative,
                                                 std::span<const KeywordSuggestion> extractive);

}  // namespace kwdial
