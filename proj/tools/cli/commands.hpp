#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwdial/decode.hpp"
#include "kwdial/model.hpp"
#include "kwdial/objective.hpp"

namespace kwdial::cli {

struct Common {
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads() const;
};

struct PrepareArgs {
  std::string train, valid, test, embeddings, out;
  std::size_t min_freq = 3;
  std::size_t max_dialogs = 0;
};

struct TrainArgs {
  std::string data, checkpoint, embeddings, synonyms, log;
  std::string model_class = "no_kw";
  LossWeights weights;
  int batch = 32, epochs = 3, warmup = 200, checkpoint_every = 0, max_steps = 0;
  double lr = 2.5e-4, clip = 1.0;
  std::size_t valid_limit = 500, valid_kia_limit = 100, max_examples = 0;
  ModelConfig model;
};

struct EvalArgs {
  std::string data, split = "test", ref_lm, embeddings, json, generations;
  std::vector<std::string> checkpoints;
  double top_p = 0.9;
  int max_new_tokens = 40;
  std::size_t limit = 0;
};

struct SweepArgs {
  TrainArgs train;
  EvalArgs eval;
  std::vector<double> values = {0.0, 0.005, 0.01, 0.1, 1.0};
  std::string out_dir = "sweep";
};

struct DecodeArgs {
  std::string strategy = "beam";
  int beams = 10, groups = 2, num = 3, max_new_tokens = 40;
  double penalty = 5.5, top_p = 0.9;
  DecodeConfig config(std::uint64_t seed) const;
};

struct SuggestArgs {
  std::string base, predictor, embeddings, context_file;
  DecodeArgs decode;
};

struct GenerateArgs {
  std::string checkpoint, context_file;
  std::vector<std::string> keywords;
  DecodeArgs decode;
};

struct ServeArgs {
  std::string response, multi_response, predictor, base, embeddings, persist, static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  DecodeArgs decode;
};

int prepare(const PrepareArgs& a, const Common& c);
int train(const TrainArgs& a, const Common& c);
int sweep_gamma(const SweepArgs& a, const Common& c);
int eval(const EvalArgs& a, const Common& c);
int suggest(const SuggestArgs& a, const Common& c);
int generate(const GenerateArgs& a, const Common& c);
int interact(const ServeArgs& a, const Common& c);
int serve(const ServeArgs& a, const Common& c);

}  // namespace kwdial::cli
