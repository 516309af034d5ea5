#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kwdial/checkpoint.hpp"
#include "kwdial/corpus.hpp"
#include "kwdial/embeddings.hpp"
#include "kwdial/model.hpp"
#include "kwdial/model_class.hpp"
#include "kwdial/objective.hpp"

namespace kwdial {

struct TrainConfig {
  std::string model_class = "no_kw";
  LossWeights weights;
  int batch_size = 32;
  int epochs = 3;
  double learning_rate = 2.5e-4;
  int warmup_steps = 200;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between periodic snapshots; 0 = best only
  std::filesystem::path checkpoint;  // best-validation checkpoint; empty = keep in memory
  std::size_t valid_limit = 500;     // validation examples used for L_m
  std::size_t valid_kia_limit = 100; // validation examples decoded for KIA
  int kia_max_new_tokens = 30;
  bool deterministic = true;         // false: encode batches on a producer thread
  int max_steps = 0;                 // stop after this many updates; 0 = no limit

  void validate() const;
};

// Keyword pools for the similarity-pooled classes, resolved and cached per
// keyword against the training vocabulary.
class PoolCache {
 public:
  PoolCache() = default;
  PoolCache(PoolLookup lookup, const Vocabulary& vocab);
  const TokenPool& pool(const std::string& keyword);
  bool available() const { return static_cast<bool>(lookup_); }

 private:
  PoolLookup lookup_;
  const Vocabulary* vocab_ = nullptr;
  std::map<std::string, TokenPool, std::less<>> cache_;
};

// One example ready for a forward/backward pass.
struct TrainingInstance {
  EncodedInput positive;
  std::optional<EncodedInput> distractor;  // present when the class uses L_n
  std::optional<KeywordSpec> keyword;      // present when L_k applies to this example
};

TrainingInstance make_instance(const DialogExample& example, const ModelClass& cls, const Vocabulary& vocab,
                               PoolCache* pools, int max_len);

// Loss of one instance; when grads is non-null adds scale * d(total)/d(params).
template <typename T>
LossBreakdown instance_loss(const Transformer<T>& model, const TrainingInstance& instance,
                            const LossWeights& weights, Parameters<T>* grads = nullptr, T scale = T(1),
                            Dropout dropout = {});

struct StepStats {
  int step = 0;
  double lr = 0.0;
  double lm = 0.0;
  double cls = 0.0;
  double keyword = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;       // before clipping
  double clipped_norm = 0.0;    // after clipping
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;  // "train" or "valid"
  double lm = 0.0;
  double cls = 0.0;
  double keyword = 0.0;
  double total = 0.0;
  std::optional<double> kia;
};

struct TrainResult {
  Transformer<float> model;  // best-validation parameters
  int best_epoch = 0;
  std::vector<EpochMetrics> log;
  std::vector<StepStats> steps;
};

double global_norm(const Parameters<float>& grads);

class Trainer {
 public:
  Trainer(TrainConfig config, ModelConfig model, const Vocabulary& vocab, PoolLookup pools = {});

  // Optional JSON-lines sink for the per-epoch log.
  void set_log(std::ostream* out) { log_ = out; }

  TrainResult train(std::span<const DialogExample> train, std::span<const DialogExample> valid);

  // One clipped Adam update on a batch; exposed for step-level tests.
  StepStats step(std::span<const TrainingInstance> batch);
  std::vector<TrainingInstance> prepare(std::span<const DialogExample> batch);

  EpochMetrics validate(std::span<const DialogExample> valid, int epoch);

  const Transformer<float>& model() const { return model_; }
  const ModelClass& model_class() const { return cls_; }
  const TrainConfig& config() const { return config_; }
  CheckpointMeta meta(int epoch) const;

 private:
  double learning_rate(int step) const;

  TrainConfig config_;
  ModelClass cls_;
  LossWeights weights_;
  const Vocabulary& vocab_;
  PoolCache pools_;
  Transformer<float> model_;
  Parameters<float> grads_, m_, v_;
  std::mt19937_64 dropout_rng_;
  int step_ = 0;
  std::ostream* log_ = nullptr;
};

std::string to_json_line(const EpochMetrics& m);

}  // namespace kwdial
