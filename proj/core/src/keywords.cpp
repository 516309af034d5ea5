#include "kwdial/keywords.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {

std::string to_string(SuggestionSource source) {
  switch (source) {
    case SuggestionSource::extractive:
      return "extractive";
    case SuggestionSource::generative:
      return "generative";
    case SuggestionSource::human:
      return "human";
  }
  return "unknown";
}

bool is_valid_keyword(std::string_view word) {
  auto parts = split_words(word);
  return parts.size() == 1 && parts[0] == word && is_content_word(word);
}

std::vector<KeywordSuggestion> extract_keywords(std::string_view text, const EmbeddingTable& table,
                                                std::size_t k) {
  if (k < 1) throw ConfigError("extract_keywords: k must be >= 1");
  const auto words = split_words(text);
  const auto centroid = text_centroid(words, table);
  std::set<std::string> seen;
  std::vector<KeywordSuggestion> out;
  for (const auto& w : words) {
    if (!is_content_word(w) || !seen.insert(w).second) continue;
    auto v = table.lookup(w);
    if (!v) continue;
    out.push_back({w, SuggestionSource::extractive, cosine(*v, centroid)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.text < b.text;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

KeywordExtractor make_extractor(const EmbeddingTable& table, std::size_t k) {
  return [&table, k](std::string_view text) {
    std::vector<std::string> out;
    for (auto& s : extract_keywords(text, table, k)) out.push_back(std::move(s.text));
    return out;
  };
}

std::vector<KeywordSuggestion> extractive_suggest(std::span<const std::vector<TokenId>> context,
                                                  const Transformer<float>& base, const Vocabulary& vocab,
                                                  const SuggestConfig& config, const EmbeddingTable& table,
                                                  std::vector<std::string>* beams) {
  TransformerSession session(base, context, {}, config.decode.max_new_tokens);
  auto gens = decode(session, config.decode);
  std::map<std::string, double> best;
  for (const auto& g : gens) {
    auto text = vocab.detokenize(g.tokens);
    for (const auto& s : extract_keywords(text, table, std::max<std::size_t>(config.top, 1))) {
      auto [it, fresh] = best.emplace(s.text, s.score);
      if (!fresh) it->second = std::max(it->second, s.score);
    }
    if (beams) beams->push_back(std::move(text));
  }
  std::vector<KeywordSuggestion> out;
  for (const auto& [w, score] : best) out.push_back({w, SuggestionSource::extractive, score});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  if (out.size() > config.top) out.resize(config.top);
  return out;
}

std::vector<std::string> parse_keyword_list(std::string_view text) {
  std::vector<std::string> out;
  std::vector<std::string> piece;
  auto flush = [&] {
    if (piece.size() == 1 && is_valid_keyword(piece[0])) out.push_back(piece[0]);
    piece.clear();
  };
  for (auto& w : split_words(text)) {
    if (w == ",") {
      flush();
    } else {
      piece.push_back(std::move(w));
    }
  }
  flush();
  return out;
}

std::vector<KeywordSuggestion> generative_suggest(std::span<const std::vector<TokenId>> context,
                                                  const Transformer<float>& predictor, const Vocabulary& vocab,
                                                  const SuggestConfig& config, std::vector<std::string>* beams) {
  TransformerSession session(predictor, context, {}, config.decode.max_new_tokens,
                             ResponseOpener::keyword_prediction);
  auto gens = decode(session, config.decode);
  std::vector<KeywordSuggestion> out;
  std::set<std::string> seen;
  for (const auto& g : gens) {
    auto text = vocab.detokenize(g.tokens);
    for (const auto& w : parse_keyword_list(text)) {
      if (out.size() < config.top && seen.insert(w).second) {
        out.push_back({w, SuggestionSource::generative, g.score});
      }
    }
    if (beams) beams->push_back(std::move(text));
  }
  return out;
}

std::vector<KeywordSuggestion> merge_suggestions(std::span<const KeywordSuggestion> generative,
                                                 std::span<const KeywordSuggestion> extractive) {
  std::vector<KeywordSuggestion> out;
  std::set<std::string> seen;
  for (auto list : {generative, extractive}) {
    for (const auto& k : list) {
      if (seen.insert(k.text).second) out.push_back(k);
    }
  }
  return out;
}

}  // namespace kwdial
