#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kwdial {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kSpeaker1 = 4;
inline constexpr TokenId kSpeaker2 = 5;
inline constexpr TokenId kKeyword = 6;
inline constexpr TokenId kKeywordPredict = 7;
inline constexpr TokenId kCount = 8;
}  // namespace special

// Token <-> id bijection. Ids 0-7 are the reserved tokens in the order above.
class Vocabulary {
 public:
  Vocabulary();
  static Vocabulary from_tokens(std::span<const std::string> tokens);

  // Returns the existing id when the token is already present.
  TokenId add(std::string_view token);

  TokenId id(std::string_view token) const;  // <unk> when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids, bool skip_special = true) const;

  // Lowercase/punctuation-split then map to ids.
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::string_view special_token_text(TokenId id);

}  // namespace kwdial
