#include "kwdial/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "kwdial/decode.hpp"
#include "kwdial/error.hpp"
#include "kwdial/eval.hpp"
#include "kwdial/text.hpp"

namespace kwdial {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (warmup_steps < 0) throw ConfigError("warmup steps must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be >= 0");
  if (checkpoint_every > 0 && checkpoint.empty()) throw ConfigError("checkpoint cadence needs a checkpoint path");
  ModelClass::parse(model_class);
}

PoolCache::PoolCache(PoolLookup lookup, const Vocabulary& vocab) : lookup_(std::move(lookup)), vocab_(&vocab) {}

const TokenPool& PoolCache::pool(const std::string& keyword) {
  auto it = cache_.find(keyword);
  if (it != cache_.end()) return it->second;
  TokenPool p = lookup_ ? resolve_pool(lookup_(keyword), *vocab_) : TokenPool{};
  if (p.keyword.empty()) p.keyword = keyword;
  return cache_.emplace(keyword, std::move(p)).first->second;
}

namespace {

std::vector<TokenId> clip(std::span<const TokenId> response, std::size_t keywords, int max_len) {
  const std::size_t room = static_cast<std::size_t>(max_len) - 5 - keywords;
  return {response.begin(), response.begin() + static_cast<std::ptrdiff_t>(std::min(room, response.size()))};
}

std::vector<Matrix<float>*> tensors(Parameters<float>& p) {
  std::vector<Matrix<float>*> out;
  p.visit([&](const std::string&, Matrix<float>& m) { out.push_back(&m); });
  return out;
}

}  // namespace

TrainingInstance make_instance(const DialogExample& example, const ModelClass& cls, const Vocabulary& vocab,
                               PoolCache* pools, int max_len) {
  // Keywords outside the vocabulary can neither be encoded nor targeted.
  DialogExample ex;
  ex.keywords.reserve(example.keywords.size());
  for (const auto& k : example.keywords) {
    if (vocab.contains(k)) ex.keywords.push_back(k);
  }

  TrainingInstance inst;
  EncodeOptions opts;
  opts.max_len = max_len;
  if (cls.reference_lm) {
    inst.positive = encode_example({}, clip(example.response, 0, max_len), {}, opts);
    return inst;
  }
  if (cls.keyword_prediction) {
    opts.opener = ResponseOpener::keyword_prediction;
    auto target = vocab.encode(split_words(keyword_prediction_target(ex.keywords)));
    inst.positive = encode_example(example.context, clip(target, 0, max_len), {}, opts);
    return inst;
  }

  const auto block = vocab.encode(keyword_block(ex, cls));
  inst.positive = encode_example(example.context, clip(example.response, block.size(), max_len), block, opts);
  if (cls.uses_classification() && !example.distractor.empty()) {
    inst.distractor = encode_example(example.context, clip(example.distractor, block.size(), max_len), block, opts);
  }

  if (cls.keyword_loss) {
    KeywordSpec spec;
    spec.mode = cls.loss_mode();
    spec.multi_weighting = cls.pool_weighting();
    for (const auto& k : kia_targets(ex, cls)) {
      TokenPool pool = (cls.pools != PoolSource::none && pools) ? pools->pool(k) : resolve_keyword(k, vocab);
      if (cls.pools == PoolSource::none && pool.keyword_token == special::kUnk) continue;
      spec.keywords.push_back(std::move(pool));
    }
    if (!spec.keywords.empty()) inst.keyword = std::move(spec);
  }
  return inst;
}

template <typename T>
LossBreakdown instance_loss(const Transformer<T>& model, const TrainingInstance& inst, const LossWeights& w,
                            Parameters<T>* grads, T scale, Dropout dropout) {
  ForwardCache<T> cache, neg_cache;
  const auto& pos = inst.positive;
  auto fwd = model.forward(pos, grads ? &cache : nullptr, dropout, true);
  const T lm = lm_loss<T>(fwd.logits, pos.targets, pos.lm_mask);

  KeywordLoss<T> kl;
  if (inst.keyword) kl = keyword_loss<T>(fwd.logits, pos.lm_mask, *inst.keyword);

  T cls = 0;
  std::vector<T> dscores;
  if (inst.distractor && w.beta != 0.0) {
    auto neg = model.forward(*inst.distractor, grads ? &neg_cache : nullptr, dropout, false);
    const std::vector<T> scores = {fwd.cls_score, neg.cls_score};
    cls = cls_loss<T>(scores, 0);
    if (grads) dscores = cls_loss_grad<T>(scores, 0);
  }

  auto b = total_loss(static_cast<double>(lm), static_cast<double>(cls), static_cast<double>(kl.loss), w);
  b.selections = std::move(kl.selections);

  if (grads) {
    Matrix<T> dlogits = Matrix<T>::Zero(fwd.logits.rows(), fwd.logits.cols());
    lm_loss_grad<T>(fwd.logits, pos.targets, pos.lm_mask, scale * static_cast<T>(w.alpha), dlogits);
    if (inst.keyword && w.gamma != 0.0) {
      KeywordLoss<T> sel;
      sel.selections = b.selections;
      keyword_loss_grad<T>(fwd.logits, sel, scale * static_cast<T>(w.gamma), dlogits);
    }
    const T beta = static_cast<T>(w.beta);
    model.backward(pos, cache, &dlogits, dscores.empty() ? T(0) : scale * beta * dscores[0], *grads);
    if (!dscores.empty()) model.backward(*inst.distractor, neg_cache, nullptr, scale * beta * dscores[1], *grads);
  }
  return b;
}

template LossBreakdown instance_loss<float>(const Transformer<float>&, const TrainingInstance&, const LossWeights&,
                                            Parameters<float>*, float, Dropout);
template LossBreakdown instance_loss<double>(const Transformer<double>&, const TrainingInstance&,
                                             const LossWeights&, Parameters<double>*, double, Dropout);

double global_norm(const Parameters<float>& grads) {
  double sq = 0.0;
  grads.visit([&](const std::string&, const Matrix<float>& m) { sq += m.cast<double>().squaredNorm(); });
  return std::sqrt(sq);
}

Trainer::Trainer(TrainConfig config, ModelConfig model, const Vocabulary& vocab, PoolLookup pools)
    : config_(std::move(config)), vocab_(vocab) {
  config_.validate();
  cls_ = ModelClass::parse(config_.model_class);
  weights_ = cls_.effective(config_.weights);
  if (cls_.pools != PoolSource::none && !pools) {
    throw ConfigError("model class " + cls_.tag + " needs similarity pools");
  }
  if (model.vocab_size != static_cast<int>(vocab.size())) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) + " != vocabulary size " +
                      std::to_string(vocab.size()));
  }
  pools_ = PoolCache(std::move(pools), vocab);
  model_ = Transformer<float>::initialize(model, config_.seed);
  grads_ = Parameters<float>::zeros(model);
  m_ = Parameters<float>::zeros(model);
  v_ = Parameters<float>::zeros(model);
  dropout_rng_.seed(config_.seed ^ 0x9e3779b97f4a7c15ULL);
}

double Trainer::learning_rate(int step) const {
  if (config_.warmup_steps == 0) return config_.learning_rate;
  return config_.learning_rate * std::min(1.0, static_cast<double>(step) / config_.warmup_steps);
}

std::vector<TrainingInstance> Trainer::prepare(std::span<const DialogExample> batch) {
  std::vector<TrainingInstance> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(make_instance(ex, cls_, vocab_, &pools_, model_.config().max_len));
  return out;
}

StepStats Trainer::step(std::span<const TrainingInstance> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  grads_.set_zero();
  StepStats s;
  const float scale = 1.0f / static_cast<float>(batch.size());
  const Dropout dropout{model_.config().dropout, &dropout_rng_};
  for (const auto& inst : batch) {
    auto b = instance_loss<float>(model_, inst, weights_, &grads_, scale, dropout);
    s.lm += b.lm;
    s.cls += b.cls;
    s.keyword += b.keyword;
    s.total += b.total;
  }
  const double n = static_cast<double>(batch.size());
  s.lm /= n;
  s.cls /= n;
  s.keyword /= n;
  s.total /= n;

  s.grad_norm = global_norm(grads_);
  if (!std::isfinite(s.grad_norm)) throw NonFiniteLoss("grad", "non-finite gradient norm");
  const double factor = s.grad_norm > config_.clip_norm ? config_.clip_norm / s.grad_norm : 1.0;
  if (factor < 1.0) {
    grads_.visit([&](const std::string&, Matrix<float>& m) { m *= static_cast<float>(factor); });
  }
  s.clipped_norm = global_norm(grads_);

  ++step_;
  s.step = step_;
  s.lr = learning_rate(step_);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, step_);
  const double c2 = 1.0 - std::pow(b2, step_);
  auto p = tensors(model_.params());
  auto g = tensors(grads_);
  auto m = tensors(m_);
  auto v = tensors(v_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    float* pp = p[i]->data();
    const float* gp = g[i]->data();
    float* mp = m[i]->data();
    float* vp = v[i]->data();
    const Eigen::Index size = p[i]->size();
    for (Eigen::Index k = 0; k < size; ++k) {
      mp[k] = static_cast<float>(b1 * mp[k] + (1.0 - b1) * gp[k]);
      vp[k] = static_cast<float>(b2 * vp[k] + (1.0 - b2) * gp[k] * gp[k]);
      const double mh = mp[k] / c1, vh = vp[k] / c2;
      pp[k] = static_cast<float>(pp[k] - s.lr * mh / (std::sqrt(vh) + eps));
    }
  }
  return s;
}

EpochMetrics Trainer::validate(std::span<const DialogExample> valid, int epoch) {
  EpochMetrics em;
  em.epoch = epoch;
  em.split = "valid";
  const std::size_t n = std::min(valid.size(), config_.valid_limit ? config_.valid_limit : valid.size());
  if (n == 0) return em;
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = make_instance(valid[i], cls_, vocab_, &pools_, model_.config().max_len);
    auto b = instance_loss<float>(model_, inst, weights_);
    em.lm += b.lm;
    em.cls += b.cls;
    em.keyword += b.keyword;
    em.total += b.total;
  }
  em.lm /= static_cast<double>(n);
  em.cls /= static_cast<double>(n);
  em.keyword /= static_cast<double>(n);
  em.total /= static_cast<double>(n);

  if (cls_.uses_classification() && config_.valid_kia_limit > 0) {
    const std::size_t k = std::min(valid.size(), config_.valid_kia_limit);
    DecodeConfig dc;
    dc.strategy = DecodeStrategy::greedy;
    dc.max_new_tokens = config_.kia_max_new_tokens;
    std::vector<std::string> responses;
    std::vector<std::vector<std::string>> targets;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& ex = valid[i];
      std::vector<std::string> present;
      for (const auto& kw : keyword_block(ex, cls_)) {
        if (vocab_.contains(kw)) present.push_back(kw);
      }
      auto ids = vocab_.encode(present);
      TransformerSession session(model_, ex.context, ids, dc.max_new_tokens);
      responses.push_back(vocab_.detokenize(greedy_decode(session, dc).tokens));
      targets.push_back(kia_targets(ex, cls_));
    }
    em.kia = kia(responses, targets).kia;
  }
  return em;
}

CheckpointMeta Trainer::meta(int epoch) const {
  CheckpointMeta m;
  m.model_class = cls_.tag;
  m.epoch = epoch;
  m.seed = config_.seed;
  m.alpha = weights_.alpha;
  m.beta = weights_.beta;
  m.gamma = weights_.gamma;
  nlohmann::ordered_json extra;
  extra["batch_size"] = config_.batch_size;
  extra["learning_rate"] = config_.learning_rate;
  extra["warmup_steps"] = config_.warmup_steps;
  extra["clip_norm"] = config_.clip_norm;
  extra["steps"] = step_;
  m.extra_json = extra.dump();
  return m;
}

namespace {

// Bounded hand-over queue: the producer encodes batches, the update loop
// takes ownership of each one in order.
class BatchQueue {
 public:
  void push(std::vector<TrainingInstance> b) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return q_.size() < 2 || closed_; });
    q_.push_back(std::move(b));
    cv_.notify_all();
  }
  void finish(std::exception_ptr err = nullptr) {
    std::lock_guard lock(mu_);
    done_ = true;
    error_ = err;
    cv_.notify_all();
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }
  bool closed() {
    std::lock_guard lock(mu_);
    return closed_;
  }
  std::optional<std::vector<TrainingInstance>> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty() || done_; });
    if (q_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    auto b = std::move(q_.front());
    q_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<TrainingInstance>> q_;
  bool done_ = false, closed_ = false;
  std::exception_ptr error_;
};

}  // namespace

TrainResult Trainer::train(std::span<const DialogExample> train, std::span<const DialogExample> valid) {
  if (train.empty()) throw ConfigError("no training examples");
  TrainResult result;
  Parameters<float> best = model_.params();
  double best_lm = std::numeric_limits<double>::infinity();
  std::mt19937_64 order_rng(config_.seed);
  const auto bs = static_cast<std::size_t>(config_.batch_size);

  for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
    const std::size_t batches = (order.size() + bs - 1) / bs;
    auto gather = [&](std::size_t b) {
      std::vector<DialogExample> ex;
      for (std::size_t i = b * bs; i < std::min(order.size(), (b + 1) * bs); ++i) ex.push_back(train[order[i]]);
      return ex;
    };

    EpochMetrics em;
    em.epoch = epoch;
    em.split = "train";
    std::size_t done = 0;
    bool stop = false;

    BatchQueue queue;
    std::thread producer;
    if (!config_.deterministic) {
      producer = std::thread([&] {
        try {
          for (std::size_t b = 0; b < batches && !queue.closed(); ++b) {
            auto ex = gather(b);
            queue.push(prepare(ex));
          }
          queue.finish();
        } catch (...) {
          queue.finish(std::current_exception());
        }
      });
    }
    auto next = [&](std::size_t b) -> std::optional<std::vector<TrainingInstance>> {
      if (!config_.deterministic) return queue.pop();
      if (b >= batches) return std::nullopt;
      auto ex = gather(b);
      return prepare(ex);
    };

    try {
      for (std::size_t b = 0;; ++b) {
        auto batch = next(b);
        if (!batch) break;
        StepStats s;
        try {
          s = step(*batch);
        } catch (const NonFiniteLoss& e) {
          throw NonFiniteLoss(e.term(), "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                            " (" + std::to_string(batch->size()) + " examples, first training index " +
                                            std::to_string(order[b * bs]) + "): " + e.what());
        }
        result.steps.push_back(s);
        em.lm += s.lm;
        em.cls += s.cls;
        em.keyword += s.keyword;
        em.total += s.total;
        ++done;
        if (config_.max_steps > 0 && step_ >= config_.max_steps) {
          stop = true;
          break;
        }
      }
    } catch (...) {
      queue.close();
      if (producer.joinable()) producer.join();
      throw;
    }
    queue.close();
    if (producer.joinable()) producer.join();

    if (done) {
      em.lm /= static_cast<double>(done);
      em.cls /= static_cast<double>(done);
      em.keyword /= static_cast<double>(done);
      em.total /= static_cast<double>(done);
    }
    result.log.push_back(em);
    if (log_) *log_ << to_json_line(em) << "\n" << std::flush;

    const double score = valid.empty() ? em.lm : [&] {
      auto vm = validate(valid, epoch);
      result.log.push_back(vm);
      if (log_) *log_ << to_json_line(vm) << "\n" << std::flush;
      return vm.lm;
    }();
    if (score < best_lm || result.best_epoch == 0) {
      best_lm = score;
      best = model_.params();
      result.best_epoch = epoch;
      if (!config_.checkpoint.empty()) {
        save_checkpoint(config_.checkpoint, best, model_.config(), vocab_, meta(epoch));
      }
    }
    if (config_.checkpoint_every > 0 && epoch % config_.checkpoint_every == 0) {
      auto path = config_.checkpoint;
      path += ".epoch" + std::to_string(epoch);
      save_checkpoint(path, model_.params(), model_.config(), vocab_, meta(epoch));
    }
    if (stop) break;
  }
  result.model = Transformer<float>(model_.config(), std::move(best));
  return result;
}

std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["split"] = m.split;
  j["L_m"] = m.lm;
  j["L_n"] = m.cls;
  j["L_k"] = m.keyword;
  j["total"] = m.total;
  j["KIA"] = m.kia ? nlohmann::ordered_json(*m.kia) : nlohmann::ordered_json();
  return j.dump();
}

}  // namespace kwdial
