#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kwdial/vocab.hpp"

namespace kwdial {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 256;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 1024;
  int max_len = 256;
  double dropout = 0.1;

  void validate() const;
  // Closed form; equals the element count of Parameters<T>::initialize(*this).
  std::size_t parameter_count() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

// Per-position input type ("dialog state") ids.
enum class InputState : std::int8_t { keyword = 0, speaker1 = 1, speaker2 = 2 };
inline constexpr int kInputStateCount = 3;

enum class ResponseOpener { speaker, keyword_prediction };

// Token layout:
//   <bos> <kw> k1 [k2 k3] <kw>  u_1 ... u_n  <speaker2> r_1 .. r_m <eos>
// where every context turn u_i is "<speakerX> words" with the last context
// turn spoken by <speaker1> and parity alternating backwards. The response is
// spoken by <speaker2> (or opened by <kwpred> in keyword-prediction mode).
// lm_mask[t] is set on the positions whose next-token logits produce a
// response token (r_1..r_m and <eos>); targets[t] is that token, -1 elsewhere.
struct EncodedInput {
  std::vector<TokenId> tokens;
  std::vector<int> positions;
  std::vector<InputState> states;
  std::vector<std::uint8_t> lm_mask;
  std::vector<TokenId> targets;
  int anchor = -1;          // classification position (<eos>), -1 when open-ended
  int response_start = 0;   // index of the response opener token
  int keyword_block_end = 0;
  std::size_t dropped_context = 0;
  std::size_t size() const { return tokens.size(); }
};

struct EncodeOptions {
  int max_len = 256;
  bool close_response = true;  // append <eos>; false leaves a generation prompt
  ResponseOpener opener = ResponseOpener::speaker;
};

// Oldest context turns are dropped first when the sequence would exceed
// max_len; the keyword block and response are never truncated (ConfigError).
EncodedInput encode_example(std::span<const std::vector<TokenId>> context,
                            std::span<const TokenId> response, std::span<const TokenId> keywords,
                            const EncodeOptions& options);

template <typename T>
struct LayerWeights {
  Matrix<T> ln1_gain, ln1_bias;
  Matrix<T> qkv_w, qkv_b;
  Matrix<T> proj_w, proj_b;
  Matrix<T> ln2_gain, ln2_bias;
  Matrix<T> fc_w, fc_b;
  Matrix<T> out_w, out_b;
};

template <typename T>
struct Parameters {
  Matrix<T> token_embedding;     // V x d, tied with the LM head
  Matrix<T> position_embedding;  // max_len x d
  Matrix<T> state_embedding;     // 3 x d
  std::vector<LayerWeights<T>> layers;
  Matrix<T> final_gain, final_bias;
  Matrix<T> cls_w, cls_b;  // 1 x d, 1 x 1

  static Parameters zeros(const ModelConfig& config);
  static Parameters initialize(const ModelConfig& config, std::uint64_t seed);

  // Visits every tensor in a fixed order with its stable name.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  template <typename U>
  Parameters<U> cast() const;

  std::size_t count() const;
  void set_zero();
};

// Residual/embedding dropout source; rate 0 or a null rng disables it.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
struct ForwardCache;

template <typename T>
struct ForwardResult {
  Matrix<T> logits;  // T x V (empty when logits were not requested)
  T cls_score = T(0);
};

template <typename T>
struct DecoderState {
  std::vector<Matrix<T>> keys, values;  // per layer, max_len x d
  int length = 0;
};

template <typename T>
class Transformer {
 public:
  Transformer() = default;
  Transformer(ModelConfig config, Parameters<T> params);
  static Transformer initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Parameters<T>& params() const { return params_; }
  Parameters<T>& params() { return params_; }

  // Causal forward pass. When cache is non-null it is filled for backward().
  ForwardResult<T> forward(const EncodedInput& input, ForwardCache<T>* cache = nullptr,
                           Dropout dropout = {}, bool want_logits = true) const;

  // Accumulates into grads the gradient of <dlogits, logits> + dscore * score.
  // dlogits may be null when the loss does not touch the LM head.
  void backward(const EncodedInput& input, const ForwardCache<T>& cache, const Matrix<T>* dlogits,
                T dscore, Parameters<T>& grads) const;

  // capacity bounds the number of positions the state can hold (<= max_len).
  DecoderState<T> start(int capacity = 0) const;
  // Appends one token at the state's next position; returns its logits row.
  RowVector<T> step(DecoderState<T>& state, TokenId token, InputState input_state) const;

 private:
  ModelConfig config_;
  Parameters<T> params_;
};

template <typename T>
struct LayerCache {
  Matrix<T> x_in, xhat1, a, qkv, ctx, drop_attn, x_mid, xhat2, b, hpre, g, drop_mlp;
  RowVector<T> rstd1, rstd2;
  std::vector<Matrix<T>> probs;  // per head, T x T
};

template <typename T>
struct ForwardCache {
  Matrix<T> drop_embed;
  std::vector<LayerCache<T>> layers;
  Matrix<T> x_final, xhat_final, hidden;
  RowVector<T> rstd_final;
};

// ---- template member definitions -------------------------------------------------

template <typename T>
template <typename F>
void Parameters<T>::visit(F&& f) {
  f(std::string("tok_emb"), token_embedding);
  f(std::string("pos_emb"), position_embedding);
  f(std::string("state_emb"), state_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto p = "layers." + std::to_string(i) + ".";
    auto& l = layers[i];
    f(p + "ln1.gain", l.ln1_gain);
    f(p + "ln1.bias", l.ln1_bias);
    f(p + "attn.qkv.weight", l.qkv_w);
    f(p + "attn.qkv.bias", l.qkv_b);
    f(p + "attn.proj.weight", l.proj_w);
    f(p + "attn.proj.bias", l.proj_b);
    f(p + "ln2.gain", l.ln2_gain);
    f(p + "ln2.bias", l.ln2_bias);
    f(p + "mlp.fc.weight", l.fc_w);
    f(p + "mlp.fc.bias", l.fc_b);
    f(p + "mlp.out.weight", l.out_w);
    f(p + "mlp.out.bias", l.out_b);
  }
  f(std::string("final_ln.gain"), final_gain);
  f(std::string("final_ln.bias"), final_bias);
  f(std::string("cls.weight"), cls_w);
  f(std::string("cls.bias"), cls_b);
}

template <typename T>
template <typename F>
void Parameters<T>::visit(F&& f) const {
  const_cast<Parameters<T>*>(this)->visit([&](const std::string& name, Matrix<T>& m) {
    f(name, static_cast<const Matrix<T>&>(m));
  });
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out;
  out.layers.resize(layers.size());
  std::vector<const Matrix<T>*> src;
  visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
  return out;
}

}  // namespace kwdial
