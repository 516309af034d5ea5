#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kwdial/vocab.hpp"

namespace kwdial {

inline constexpr std::size_t kMaxContextTurns = 5;
inline constexpr std::size_t kMaxKeywords = 3;

struct Dialog {
  std::vector<std::string> utterances;
};

struct ParseStats {
  std::size_t lines = 0;
  std::size_t skipped = 0;  // lines with fewer than two utterances
};

// DailyDialog text format: one dialog per line, turns separated by "__eou__".
std::vector<Dialog> parse_corpus(const std::filesystem::path& path, ParseStats* stats = nullptr);
std::vector<Dialog> parse_corpus(std::istream& in, ParseStats* stats = nullptr);

// Frequency-desc then lexicographic ordering after the reserved ids.
Vocabulary build_vocab(std::span<const Dialog> dialogs, std::size_t min_freq = 3);

using KeywordExtractor = std::function<std::vector<std::string>(std::string_view text)>;

// Text form of one training unit; this is what the example JSONL files hold.
// All strings are normalized (space-joined split_words output).
struct ExampleRecord {
  std::size_t dialog = 0;
  std::vector<std::string> context;
  std::string response;
  std::vector<std::string> keywords;  // extraction-score order, at most 3
  std::size_t distractor = 0;         // index of the example whose response is the distractor
};

struct DialogExample {
  std::size_t dialog = 0;
  std::vector<std::vector<TokenId>> context;  // oldest first, at most 5
  std::vector<TokenId> response;
  std::vector<std::string> keywords;
  std::vector<TokenId> distractor;
};

struct BuildStats {
  std::size_t examples = 0;
  std::size_t keywordless = 0;
};

// Uniform over responses from other dialogs whose text differs from the
// example's own response. Throws ConfigError on a degenerate corpus.
std::size_t sample_distractor(std::span<const ExampleRecord> records, std::size_t index,
                              std::mt19937_64& rng);

std::vector<ExampleRecord> build_example_records(std::span<const Dialog> dialogs,
                                                 const KeywordExtractor& extractor,
                                                 std::uint64_t seed, BuildStats* stats = nullptr);

std::vector<DialogExample> encode_records(std::span<const ExampleRecord> records,
                                          const Vocabulary& vocab);

std::vector<DialogExample> build_examples(std::span<const Dialog> dialogs, const Vocabulary& vocab,
                                          const KeywordExtractor& extractor, std::uint64_t seed,
                                          BuildStats* stats = nullptr);

void write_records(const std::filesystem::path& path, std::span<const ExampleRecord> records);
std::vector<ExampleRecord> read_records(const std::filesystem::path& path);

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::filesystem::path& path);

// Unbiased draw in [0, n) that does not depend on the standard library's
// distribution implementation.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

}  // namespace kwdial
