#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kwdial::synth {

// Topic-clustered dialog corpus in the DailyDialog text format, with matching
// word vectors (GloVe text format) and a synonym lexicon (TSV). Function words
// come from the stopword list, so each utterance carries one or two topic
// words and keyword extraction has something to find.
struct SynthConfig {
  std::size_t train_dialogs = 2000;
  std::size_t valid_dialogs = 200;
  std::size_t test_dialogs = 200;
  std::size_t topics = 20;
  std::size_t words_per_topic = 30;
  std::size_t min_turns = 4;
  std::size_t max_turns = 8;
  std::size_t dim = 50;
  double noise = 0.6;        // within-topic spread relative to the topic direction
  std::string plant;         // when set, inserted into every utterance
  std::uint64_t seed = 7;
};

struct SynthCorpus {
  std::vector<std::string> train, valid, test;  // one dialog line each
  std::vector<std::string> embeddings;           // "word v1 ... vd"
  std::vector<std::string> synonyms;             // "word\tsynonym\tsimilarity"
  std::vector<std::vector<std::string>> topic_words;
};

SynthCorpus generate(const SynthConfig& config);

// Writes train.txt, valid.txt, test.txt, embeddings.txt, synonyms.tsv.
void write(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace kwdial::synth
