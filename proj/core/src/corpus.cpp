#include "kwdial/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {

std::vector<Dialog> parse_corpus(std::istream& in, ParseStats* stats) {
  static constexpr std::string_view kSep = "__eou__";
  std::vector<Dialog> dialogs;
  ParseStats local;
  std::string line;
  while (std::getline(in, line)) {
    ++local.lines;
    Dialog d;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto next = line.find(kSep, pos);
      auto seg = trim(std::string_view(line).substr(pos, next == std::string::npos ? std::string::npos : next - pos));
      if (!seg.empty() && !split_words(seg).empty()) d.utterances.push_back(std::move(seg));
      if (next == std::string::npos) break;
      pos = next + kSep.size();
    }
    if (d.utterances.size() < 2) {
      if (!trim(line).empty()) ++local.skipped;
      continue;
    }
    dialogs.push_back(std::move(d));
  }
  if (stats) *stats = local;
  return dialogs;
}

std::vector<Dialog> parse_corpus(const std::filesystem::path& path, ParseStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus: " + path.string());
  return parse_corpus(in, stats);
}

Vocabulary build_vocab(std::span<const Dialog> dialogs, std::size_t min_freq) {
  if (dialogs.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& d : dialogs) {
    for (const auto& u : d.utterances) {
      for (auto& w : split_words(u)) ++freq[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [w, n] : items) {
    if (n >= std::max<std::size_t>(min_freq, 1)) vocab.add(w);
  }
  return vocab;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw ConfigError("uniform_index over an empty range");
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

std::size_t sample_distractor(std::span<const ExampleRecord> records, std::size_t index,
                              std::mt19937_64& rng) {
  if (index >= records.size()) throw ConfigError("example index out of range");
  const auto& self = records[index];
  auto eligible = [&](std::size_t j) {
    return records[j].dialog != self.dialog && records[j].response != self.response;
  };
  // Rejection sampling keeps the draw uniform over eligible examples.
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto j = uniform_index(rng, records.size());
    if (eligible(j)) return j;
  }
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < records.size(); ++j) {
    if (eligible(j)) pool.push_back(j);
  }
  if (pool.empty()) throw ConfigError("degenerate corpus: no distractor available for example " + std::to_string(index));
  return pool[uniform_index(rng, pool.size())];
}

std::vector<ExampleRecord> build_example_records(std::span<const Dialog> dialogs,
                                                 const KeywordExtractor& extractor,
                                                 std::uint64_t seed, BuildStats* stats) {
  std::vector<ExampleRecord> records;
  BuildStats local;
  for (std::size_t di = 0; di < dialogs.size(); ++di) {
    std::vector<std::string> turns;
    for (const auto& u : dialogs[di].utterances) {
      auto words = split_words(u);
      turns.push_back(join_words(words));
    }
    for (std::size_t t = 1; t < turns.size(); ++t) {
      ExampleRecord r;
      r.dialog = di;
      auto first = t > kMaxContextTurns ? t - kMaxContextTurns : 0;
      r.context.assign(turns.begin() + static_cast<long>(first), turns.begin() + static_cast<long>(t));
      r.response = turns[t];
      if (extractor) {
        r.keywords = extractor(r.response);
        if (r.keywords.size() > kMaxKeywords) r.keywords.resize(kMaxKeywords);
      }
      if (r.keywords.empty()) ++local.keywordless;
      records.push_back(std::move(r));
    }
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].distractor = sample_distractor(records, i, rng);
  local.examples = records.size();
  if (stats) *stats = local;
  return records;
}

std::vector<DialogExample> encode_records(std::span<const ExampleRecord> records,
                                          const Vocabulary& vocab) {
  std::vector<DialogExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    DialogExample e;
    e.dialog = r.dialog;
    for (const auto& c : r.context) e.context.push_back(vocab.tokenize(c));
    e.response = vocab.tokenize(r.response);
    e.keywords = r.keywords;
    if (r.distractor >= records.size()) throw ParseError("distractor index out of range");
    e.distractor = vocab.tokenize(records[r.distractor].response);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<DialogExample> build_examples(std::span<const Dialog> dialogs, const Vocabulary& vocab,
                                          const KeywordExtractor& extractor, std::uint64_t seed,
                                          BuildStats* stats) {
  auto records = build_example_records(dialogs, extractor, seed, stats);
  return encode_records(records, vocab);
}

void write_records(const std::filesystem::path& path, std::span<const ExampleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write examples: " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["dialog"] = r.dialog;
    j["context"] = r.context;
    j["response"] = r.response;
    j["keywords"] = r.keywords;
    j["distractor"] = r.distractor;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ExampleRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read examples: " + path.string());
  std::vector<ExampleRecord> records;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ExampleRecord r;
      r.dialog = j.at("dialog").get<std::size_t>();
      r.context = j.at("context").get<std::vector<std::string>>();
      r.response = j.at("response").get<std::string>();
      r.keywords = j.at("keywords").get<std::vector<std::string>>();
      r.distractor = j.at("distractor").get<std::size_t>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad example record: ") + e.what(), lineno);
    }
  }
  return records;
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocabulary read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary::from_tokens(tokens);
}

}  // namespace kwdial
