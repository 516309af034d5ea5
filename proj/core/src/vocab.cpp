#include "kwdial/vocab.hpp"

#include <array>

#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {
namespace {
constexpr std::array<std::string_view, special::kCount> kSpecialText = {
    "<pad>", "<unk>", "<bos>", "<eos>", "<speaker1>", "<speaker2>", "<kw>", "<kwpred>"};
}

std::string_view special_token_text(TokenId id) {
  if (id < 0 || id >= special::kCount) throw ConfigError("not a reserved token id");
  return kSpecialText[static_cast<std::size_t>(id)];
}

Vocabulary::Vocabulary() {
  for (auto t : kSpecialText) add(t);
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  if (tokens.size() < special::kCount) throw ParseError("vocabulary missing reserved tokens");
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (tokens[i] != kSpecialText[i]) throw ParseError("reserved token out of place: " + tokens[i]);
  }
  Vocabulary v;
  for (std::size_t i = special::kCount; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw ParseError("duplicate vocabulary token: " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

TokenId Vocabulary::add(std::string_view token) {
  std::string key(token);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ConfigError("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids, bool skip_special) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) {
    if (skip_special && i < special::kCount && i != special::kUnk) continue;
    out.push_back(token(i));
  }
  return out;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  auto words = split_words(text);
  return encode(words);
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  auto words = decode(ids);
  return join_words(words);
}

}  // namespace kwdial
