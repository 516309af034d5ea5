#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kwdial {

// Immutable word -> vector store read from GloVe text format.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::vector<std::string> words, std::vector<float> data);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const;
  std::optional<std::size_t> find(std::string_view word) const;
  std::span<const float> vector(std::size_t row) const;
  std::optional<std::span<const float>> lookup(std::string_view word) const;
  const std::string& word(std::size_t row) const { return words_[row]; }
  float norm(std::size_t row) const { return norms_[row]; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::vector<float> data_;
  std::vector<float> norms_;
  std::unordered_map<std::string, std::size_t> index_;
};

EmbeddingTable load_table(const std::filesystem::path& path);
EmbeddingTable load_table(std::istream& in);

// Standard cosine in double precision; a zero vector yields 0.
double cosine(std::span<const float> u, std::span<const float> v);

struct PoolMember {
  std::string word;
  double similarity = 0.0;  // clamped to [0, 1]
};

// The keyword plus its similar words. The keyword is always present with
// similarity 1 (last, after neighbours sorted by decreasing similarity).
struct SimilarityPool {
  std::string keyword;
  std::vector<PoolMember> members;
  bool empty() const { return members.empty(); }
};

inline constexpr std::size_t kDefaultPoolSize = 5;

// Top-n by cosine excluding the query word; ties broken lexicographically.
// candidate_filter restricts which table words may appear (e.g. in-vocabulary).
// Returns an empty pool when the word is not in the table.
SimilarityPool nearest_neighbors(std::string_view word, std::size_t n, const EmbeddingTable& table,
                                 const std::function<bool(std::string_view)>& candidate_filter = {});

// word -> [(synonym, similarity)]; usable wherever nearest_neighbors pools are.
class SynonymLexicon {
 public:
  void set(const std::string& word, const std::string& synonym, double similarity);
  SimilarityPool pool(std::string_view word, std::size_t n = kDefaultPoolSize,
                      const std::function<bool(std::string_view)>& candidate_filter = {}) const;
  std::size_t duplicates() const { return duplicates_; }
  std::size_t size() const { return entries_.size(); }

  void note_duplicate() { ++duplicates_; }

 private:
  std::map<std::string, std::map<std::string, double>, std::less<>> entries_;
  std::size_t duplicates_ = 0;
};

// TSV: word \t synonym \t similarity. Duplicate (word, synonym) -> last wins.
SynonymLexicon load_synonyms(const std::filesystem::path& path);
SynonymLexicon load_synonyms(std::istream& in);

// Similarity pool source for a keyword (embedding neighbours or a lexicon).
using PoolLookup = std::function<SimilarityPool(const std::string& keyword)>;

// Mean embedding of the in-table content words; zero vector when none.
std::vector<float> text_centroid(std::span<const std::string> tokens, const EmbeddingTable& table);

}  // namespace kwdial
