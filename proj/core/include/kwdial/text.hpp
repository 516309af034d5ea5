#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kwdial {

// Word-level normalization shared by the corpus, keyword matching and metrics:
// lowercase, punctuation split into separate tokens, whitespace-delimited.
// An apostrophe between two alphanumerics stays inside the word ("don't").
std::vector<std::string> split_words(std::string_view text);

std::string join_words(std::span<const std::string> words);

// Built-in English stopword list (fixed; bump kStopwordListVersion on edit).
inline constexpr int kStopwordListVersion = 1;
bool is_stopword(std::string_view word);

// A token that may act as a keyword: not a stopword and contains a letter.
bool is_content_word(std::string_view word);

std::string trim(std::string_view s);

}  // namespace kwdial
