#include "kwdial/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {
namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  auto str = std::string(s);
  char* end = nullptr;
  out = std::strtod(str.c_str(), &end);
  return !str.empty() && end == str.c_str() + str.size() && std::isfinite(out);
}

SimilarityPool finish_pool(std::string_view keyword, std::vector<PoolMember> neighbours, std::size_t n) {
  std::stable_sort(neighbours.begin(), neighbours.end(), [](const auto& a, const auto& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.word < b.word;
  });
  if (neighbours.size() > n) neighbours.resize(n);
  SimilarityPool pool;
  pool.keyword = std::string(keyword);
  pool.members = std::move(neighbours);
  pool.members.push_back({std::string(keyword), 1.0});
  return pool;
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<std::string> words, std::vector<float> data)
    : dim_(dim), words_(std::move(words)), data_(std::move(data)) {
  if (data_.size() != dim_ * words_.size()) throw ConfigError("embedding data size mismatch");
  norms_.resize(words_.size());
  for (std::size_t r = 0; r < words_.size(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < dim_; ++c) s += static_cast<double>(data_[r * dim_ + c]) * data_[r * dim_ + c];
    norms_[r] = static_cast<float>(std::sqrt(s));
    if (!index_.emplace(words_[r], r).second) throw ParseError("duplicate embedding word: " + words_[r]);
  }
}

bool EmbeddingTable::contains(std::string_view word) const { return find(word).has_value(); }

std::optional<std::size_t> EmbeddingTable::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingTable::vector(std::size_t row) const {
  return {data_.data() + row * dim_, dim_};
}

std::optional<std::span<const float>> EmbeddingTable::lookup(std::string_view word) const {
  auto r = find(word);
  if (!r) return std::nullopt;
  return vector(*r);
}

EmbeddingTable load_table(std::istream& in) {
  std::vector<std::string> words;
  std::vector<float> data;
  std::size_t dim = 0;
  std::string line;
  long lineno = 0;
  std::unordered_map<std::string, long> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<float> values;
    std::string tok;
    while (fields >> tok) {
      double v;
      if (!parse_double(tok, v)) throw ParseError("bad number '" + tok + "' in embedding file", lineno);
      values.push_back(static_cast<float>(v));
    }
    if (values.empty()) throw ParseError("embedding line has no vector", lineno);
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw ParseError("inconsistent embedding dimension: expected " + std::to_string(dim) + ", got " +
                           std::to_string(values.size()),
                       lineno);
    }
    if (!seen.emplace(word, lineno).second) throw ParseError("duplicate embedding word '" + word + "'", lineno);
    words.push_back(std::move(word));
    data.insert(data.end(), values.begin(), values.end());
  }
  if (words.empty()) throw ParseError("empty embedding file");
  return EmbeddingTable(dim, std::move(words), std::move(data));
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings: " + path.string());
  return load_table(in);
}

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw ConfigError("cosine dimension mismatch: " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (nu == 0 || nv == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

SimilarityPool nearest_neighbors(std::string_view word, std::size_t n, const EmbeddingTable& table,
                                 const std::function<bool(std::string_view)>& candidate_filter) {
  auto row = table.find(word);
  if (!row) return SimilarityPool{std::string(word), {}};
  auto query = table.vector(*row);
  // Rank on the raw cosine; clamping is applied to the reported weight only.
  std::vector<std::pair<double, std::size_t>> ranked;
  if (n > 0) {
    ranked.reserve(table.size());
    for (std::size_t r = 0; r < table.size(); ++r) {
      if (r == *row) continue;
      if (candidate_filter && !candidate_filter(table.word(r))) continue;
      ranked.emplace_back(cosine(query, table.vector(r)), r);
    }
    const auto keep = std::min(n, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(keep), ranked.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return table.word(a.second) < table.word(b.second);
                      });
    ranked.resize(keep);
  }
  SimilarityPool pool;
  pool.keyword = std::string(word);
  for (const auto& [cos, r] : ranked) pool.members.push_back({table.word(r), clamp01(cos)});
  pool.members.push_back({std::string(word), 1.0});
  return pool;
}

void SynonymLexicon::set(const std::string& word, const std::string& synonym, double similarity) {
  auto& row = entries_[word];
  if (row.count(synonym)) ++duplicates_;
  row[synonym] = similarity;
}

SimilarityPool SynonymLexicon::pool(std::string_view word, std::size_t n,
                                    const std::function<bool(std::string_view)>& candidate_filter) const {
  auto it = entries_.find(word);
  if (it == entries_.end()) return SimilarityPool{std::string(word), {}};
  std::vector<PoolMember> members;
  for (const auto& [syn, sim] : it->second) {
    if (syn == word) continue;
    if (candidate_filter && !candidate_filter(syn)) continue;
    members.push_back({syn, clamp01(sim)});
  }
  return finish_pool(word, std::move(members), n);
}

SynonymLexicon load_synonyms(std::istream& in) {
  SynonymLexicon lex;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_on(line, '\t');
    double sim;
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || !parse_double(fields[2], sim)) {
      throw ParseError("malformed synonym line (expected word<TAB>synonym<TAB>similarity)", lineno);
    }
    lex.set(std::string(fields[0]), std::string(fields[1]), sim);
  }
  return lex;
}

SynonymLexicon load_synonyms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read synonym lexicon: " + path.string());
  return load_synonyms(in);
}

std::vector<float> text_centroid(std::span<const std::string> tokens, const EmbeddingTable& table) {
  std::vector<double> acc(table.dim(), 0.0);
  std::size_t count = 0;
  for (const auto& t : tokens) {
    if (!is_content_word(t)) continue;
    auto v = table.lookup(t);
    if (!v) continue;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*v)[i];
    ++count;
  }
  std::vector<float> out(table.dim(), 0.0f);
  if (count == 0) return out;
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(count));
  return out;
}

}  // namespace kwdial
