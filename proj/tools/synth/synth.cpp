#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "kwdial/corpus.hpp"
#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial::synth {

namespace {

// "W" marks a topic-word slot.
const std::vector<std::string> kTemplates = {
    "i have a W .",
    "do you have the W ?",
    "what about the W ?",
    "it is the W and the W .",
    "we can do it with the W .",
    "how is your W ?",
    "it was at the W .",
    "i will be there with my W .",
    "that is very W .",
    "why not the W ?",
    "is it for the W or the W ?",
    "where is the W ?",
    "they have more W than W .",
    "you should do that with your W .",
    "i am so W now !",
    "which W did you want ?",
};

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "pl", "st"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string pseudo_word(std::mt19937_64& rng) {
  const std::size_t syllables = 2 + uniform_index(rng, 2);
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kOnsets[uniform_index(rng, std::size(kOnsets))];
    w += kVowels[uniform_index(rng, std::size(kVowels))];
  }
  return w;
}

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::string utterance(const std::vector<std::string>& words, const std::string& plant, std::mt19937_64& rng) {
  const auto& tmpl = kTemplates[uniform_index(rng, kTemplates.size())];
  std::string out;
  for (const auto& tok : split_words(tmpl)) {
    if (!out.empty()) out += ' ';
    out += tok == "w" ? words[uniform_index(rng, words.size())] : tok;
  }
  if (!plant.empty()) out = plant + " , " + out;
  return out;
}

std::vector<std::string> dialogs(std::size_t count, const SynthConfig& c,
                                 const std::vector<std::vector<std::string>>& topics, std::mt19937_64& rng) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < count; ++d) {
    const auto& words = topics[uniform_index(rng, topics.size())];
    const std::size_t turns = c.min_turns + uniform_index(rng, c.max_turns - c.min_turns + 1);
    std::string line;
    for (std::size_t t = 0; t < turns; ++t) line += utterance(words, c.plant, rng) + " __eou__ ";
    line.pop_back();
    out.push_back(std::move(line));
  }
  return out;
}

std::string format_vector(const std::string& word, const std::vector<double>& v) {
  std::string line = word;
  char buf[32];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, " %.5f", x);
    line += buf;
  }
  return line;
}

}  // namespace

SynthCorpus generate(const SynthConfig& c) {
  if (c.topics < 2 || c.words_per_topic < 2) throw ConfigError("synth: need at least 2 topics of 2 words");
  if (c.min_turns < 2 || c.max_turns < c.min_turns) throw ConfigError("synth: invalid turn range");
  std::mt19937_64 rng(c.seed);
  SynthCorpus out;

  std::set<std::string> used;
  if (!c.plant.empty()) used.insert(c.plant);
  out.topic_words.resize(c.topics);
  for (auto& words : out.topic_words) {
    while (words.size() < c.words_per_topic) {
      auto w = pseudo_word(rng);
      if (is_stopword(w) || !used.insert(w).second) continue;
      words.push_back(w);
    }
  }

  std::vector<std::pair<std::string, std::vector<double>>> vectors;
  auto random_vector = [&] {
    std::vector<double> v(c.dim);
    for (double& x : v) x = normal(rng);
    return unit(std::move(v));
  };
  std::vector<std::vector<std::vector<double>>> topic_vectors(c.topics);
  for (std::size_t t = 0; t < c.topics; ++t) {
    const auto center = random_vector();
    for (const auto& w : out.topic_words[t]) {
      auto v = random_vector();
      for (std::size_t i = 0; i < c.dim; ++i) v[i] = center[i] + c.noise * v[i];
      topic_vectors[t].push_back(v);
      vectors.emplace_back(w, std::move(v));
    }
  }
  if (!c.plant.empty()) vectors.emplace_back(c.plant, random_vector());
  std::sort(vectors.begin(), vectors.end());
  for (const auto& [w, v] : vectors) out.embeddings.push_back(format_vector(w, v));

  // Lexicon: four random same-topic words per word, similarity = cosine.
  for (std::size_t t = 0; t < c.topics; ++t) {
    const auto& words = out.topic_words[t];
    for (std::size_t i = 0; i < words.size(); ++i) {
      std::set<std::size_t> picked;
      while (picked.size() < std::min<std::size_t>(4, words.size() - 1)) {
        auto j = uniform_index(rng, words.size());
        if (j != i) picked.insert(j);
      }
      for (auto j : picked) {
        const auto a = unit(topic_vectors[t][i]), b = unit(topic_vectors[t][j]);
        double cos = 0.0;
        for (std::size_t k = 0; k < c.dim; ++k) cos += a[k] * b[k];
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", std::clamp(cos, 0.0, 1.0));
        out.synonyms.push_back(words[i] + "\t" + words[j] + "\t" + buf);
      }
    }
  }

  out.train = dialogs(c.train_dialogs, c, out.topic_words, rng);
  out.valid = dialogs(c.valid_dialogs, c, out.topic_words, rng);
  out.test = dialogs(c.test_dialogs, c, out.topic_words, rng);
  return out;
}

void write(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto dump = [&](const char* name, const std::vector<std::string>& lines) {
    std::ofstream f(dir / name, std::ios::binary);
    for (const auto& l : lines) f << l << "\n";
    if (!f) throw IoError("cannot write " + (dir / name).string());
  };
  dump("train.txt", corpus.train);
  dump("valid.txt", corpus.valid);
  dump("test.txt", corpus.test);
  dump("embeddings.txt", corpus.embeddings);
  dump("synonyms.tsv", corpus.synonyms);
}

}  // namespace kwdial::synth
