#include "kwdial/model.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "kwdial/error.hpp"

namespace kwdial {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

// Box-Muller on raw mt19937_64 output: portable across standard libraries.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, Matrix<T>& xhat,
                     RowVector<T>& rstd) {
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(rows);
  Matrix<T> out(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    T mean = x.row(r).sum() / T(d);
    auto centered = (x.row(r).array() - mean).eval();
    T var = centered.square().sum() / T(d);
    T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd(r) = rs;
    xhat.row(r) = centered * rs;
    out.row(r) = xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
  }
  return out;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dout, const Matrix<T>& xhat, const RowVector<T>& rstd,
                              const Matrix<T>& gain, Matrix<T>& dgain, Matrix<T>& dbias) {
  const auto d = xhat.cols();
  dgain.row(0) += dout.cwiseProduct(xhat).colwise().sum();
  dbias.row(0) += dout.colwise().sum();
  Matrix<T> dx(xhat.rows(), d);
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    RowVector<T> dxhat = dout.row(r).cwiseProduct(gain.row(0));
    T m1 = dxhat.sum() / T(d);
    T m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / T(d);
    dx.row(r) = rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  const T c = T(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = T(std::sqrt(2.0 / std::numbers::pi));
  T t = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, const Dropout& dropout) {
  Matrix<T> mask(rows, cols);
  if (dropout.rate <= 0.0 || dropout.rng == nullptr) {
    mask.setOnes();
    return mask;
  }
  const T keep_scale = T(1.0 / (1.0 - dropout.rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    double u = static_cast<double>((*dropout.rng)() >> 11) * 0x1.0p-53;
    mask.data()[i] = u < dropout.rate ? T(0) : keep_scale;
  }
  return mask;
}

template <typename T>
void softmax_row_inplace(Eigen::Ref<RowVector<T>> row) {
  T m = row.maxCoeff();
  row = (row.array() - m).exp().matrix();
  row /= row.sum();
}

}  // namespace

// ---- ModelConfig --------------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size <= special::kCount) throw ConfigError("vocab_size must exceed the reserved token count");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_len <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t V = vocab_size, d = d_model, L = max_len, f = d_ff, n = n_layers;
  const std::size_t per_layer = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  return V * d + L * d + kInputStateCount * d + n * per_layer + 2 * d + d + 1;
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  j["dropout"] = dropout;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model config: ") + e.what());
  }
}

// ---- encoding -----------------------------------------------------------------------

EncodedInput encode_example(std::span<const std::vector<TokenId>> context,
                            std::span<const TokenId> response, std::span<const TokenId> keywords,
                            const EncodeOptions& options) {
  const std::size_t kw_len = 3 + keywords.size();
  const std::size_t resp_len = 1 + response.size() + (options.close_response ? 1 : 0);
  if (kw_len + resp_len > static_cast<std::size_t>(options.max_len)) {
    throw ConfigError("keyword block and response exceed max length " + std::to_string(options.max_len));
  }
  std::size_t first = 0;
  std::size_t total = kw_len + resp_len;
  for (const auto& turn : context) total += 1 + turn.size();
  while (total > static_cast<std::size_t>(options.max_len)) {
    total -= 1 + context[first].size();
    ++first;
  }

  EncodedInput in;
  in.dropped_context = first;
  auto push = [&](TokenId tok, InputState st) {
    in.tokens.push_back(tok);
    in.states.push_back(st);
  };
  push(special::kBos, InputState::keyword);
  push(special::kKeyword, InputState::keyword);
  for (auto k : keywords) push(k, InputState::keyword);
  push(special::kKeyword, InputState::keyword);
  in.keyword_block_end = static_cast<int>(in.tokens.size());

  const std::size_t n = context.size();
  for (std::size_t i = first; i < n; ++i) {
    const bool first_speaker = (n - 1 - i) % 2 == 0;
    const auto st = first_speaker ? InputState::speaker1 : InputState::speaker2;
    push(first_speaker ? special::kSpeaker1 : special::kSpeaker2, st);
    for (auto t : context[i]) push(t, st);
  }

  in.response_start = static_cast<int>(in.tokens.size());
  push(options.opener == ResponseOpener::speaker ? special::kSpeaker2 : special::kKeywordPredict,
       InputState::speaker2);
  for (auto t : response) push(t, InputState::speaker2);
  if (options.close_response) push(special::kEos, InputState::speaker2);

  const auto len = in.tokens.size();
  in.positions.resize(len);
  for (std::size_t i = 0; i < len; ++i) in.positions[i] = static_cast<int>(i);
  in.lm_mask.assign(len, 0);
  in.targets.assign(len, -1);
  for (std::size_t t = static_cast<std::size_t>(in.response_start); t + 1 < len; ++t) {
    in.lm_mask[t] = 1;
    in.targets[t] = in.tokens[t + 1];
  }
  in.anchor = options.close_response ? static_cast<int>(len) - 1 : -1;
  return in;
}

// ---- Parameters ---------------------------------------------------------------------

template <typename T>
Parameters<T> Parameters<T>::zeros(const ModelConfig& c) {
  c.validate();
  const int d = c.d_model, f = c.d_ff;
  Parameters p;
  p.token_embedding = Matrix<T>::Zero(c.vocab_size, d);
  p.position_embedding = Matrix<T>::Zero(c.max_len, d);
  p.state_embedding = Matrix<T>::Zero(kInputStateCount, d);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& l : p.layers) {
    l.ln1_gain = Matrix<T>::Zero(1, d);
    l.ln1_bias = Matrix<T>::Zero(1, d);
    l.qkv_w = Matrix<T>::Zero(d, 3 * d);
    l.qkv_b = Matrix<T>::Zero(1, 3 * d);
    l.proj_w = Matrix<T>::Zero(d, d);
    l.proj_b = Matrix<T>::Zero(1, d);
    l.ln2_gain = Matrix<T>::Zero(1, d);
    l.ln2_bias = Matrix<T>::Zero(1, d);
    l.fc_w = Matrix<T>::Zero(d, f);
    l.fc_b = Matrix<T>::Zero(1, f);
    l.out_w = Matrix<T>::Zero(f, d);
    l.out_b = Matrix<T>::Zero(1, d);
  }
  p.final_gain = Matrix<T>::Zero(1, d);
  p.final_bias = Matrix<T>::Zero(1, d);
  p.cls_w = Matrix<T>::Zero(1, d);
  p.cls_b = Matrix<T>::Zero(1, 1);
  return p;
}

template <typename T>
Parameters<T> Parameters<T>::initialize(const ModelConfig& c, std::uint64_t seed) {
  auto p = zeros(c);
  NormalSource normal(seed);
  const double resid_std = kInitStd / std::sqrt(2.0 * c.n_layers);
  p.visit([&](const std::string& name, Matrix<T>& m) {
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias");
    if (is_gain) {
      m.setOnes();
    } else if (!is_bias) {
      const bool resid = name.ends_with("proj.weight") || name.ends_with("out.weight");
      const double sd = resid ? resid_std : kInitStd;
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal.next() * sd);
    }
  });
  return p;
}

template <typename T>
std::size_t Parameters<T>::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
void Parameters<T>::set_zero() {
  visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
}

// ---- Transformer --------------------------------------------------------------------

template <typename T>
Transformer<T>::Transformer(ModelConfig config, Parameters<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  auto expected = Parameters<T>::zeros(config_);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  expected.visit([&](const std::string&, const Matrix<T>& m) { shapes.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  if (params_.layers.size() != static_cast<std::size_t>(config_.n_layers)) {
    throw ConfigError("parameter layer count does not match config");
  }
  params_.visit([&](const std::string& name, const Matrix<T>& m) {
    if (m.rows() != shapes[i].first || m.cols() != shapes[i].second) {
      throw ConfigError("parameter shape mismatch for " + name);
    }
    ++i;
  });
}

template <typename T>
Transformer<T> Transformer<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  return Transformer(config, Parameters<T>::initialize(config, seed));
}

template <typename T>
ForwardResult<T> Transformer<T>::forward(const EncodedInput& input, ForwardCache<T>* cache, Dropout dropout,
                                         bool want_logits) const {
  const auto len = static_cast<Eigen::Index>(input.size());
  if (len == 0) throw ConfigError("empty input");
  if (len > config_.max_len) {
    throw ConfigError("input length " + std::to_string(len) + " exceeds max length " + std::to_string(config_.max_len));
  }
  const int d = config_.d_model, heads = config_.n_heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const auto& P = params_;

  Matrix<T> x(len, d);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto tok = input.tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= config_.vocab_size) throw ConfigError("token id out of range: " + std::to_string(tok));
    x.row(t) = P.token_embedding.row(tok) + P.position_embedding.row(input.positions[static_cast<std::size_t>(t)]) +
               P.state_embedding.row(static_cast<int>(input.states[static_cast<std::size_t>(t)]));
  }
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  const bool keep = cache != nullptr;
  c.drop_embed = dropout_mask<T>(len, d, dropout);
  x = x.cwiseProduct(c.drop_embed);
  c.layers.resize(P.layers.size());

  for (std::size_t li = 0; li < P.layers.size(); ++li) {
    const auto& W = P.layers[li];
    auto& lc = c.layers[li];
    if (keep) lc.x_in = x;
    lc.a = layer_norm(x, W.ln1_gain, W.ln1_bias, lc.xhat1, lc.rstd1);
    lc.qkv = lc.a * W.qkv_w;
    lc.qkv.rowwise() += W.qkv_b.row(0);
    lc.ctx.resize(len, d);
    lc.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto q = lc.qkv.middleCols(h * dh, dh);
      auto k = lc.qkv.middleCols(d + h * dh, dh);
      auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      Matrix<T> s = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < len; ++r) {
        auto row = s.row(r);
        if (r + 1 < len) row.tail(len - r - 1).setZero();
        auto head = row.head(r + 1);
        T m = head.maxCoeff();
        head = (head.array() - m).exp().matrix();
        head /= head.sum();
      }
      lc.ctx.middleCols(h * dh, dh) = s * v;
      lc.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix<T> y = lc.ctx * W.proj_w;
    y.rowwise() += W.proj_b.row(0);
    lc.drop_attn = dropout_mask<T>(len, d, dropout);
    x += y.cwiseProduct(lc.drop_attn);
    if (keep) lc.x_mid = x;
    lc.b = layer_norm(x, W.ln2_gain, W.ln2_bias, lc.xhat2, lc.rstd2);
    lc.hpre = lc.b * W.fc_w;
    lc.hpre.rowwise() += W.fc_b.row(0);
    lc.g = lc.hpre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> z = lc.g * W.out_w;
    z.rowwise() += W.out_b.row(0);
    lc.drop_mlp = dropout_mask<T>(len, d, dropout);
    x += z.cwiseProduct(lc.drop_mlp);
  }
  if (keep) c.x_final = x;
  c.hidden = layer_norm(x, P.final_gain, P.final_bias, c.xhat_final, c.rstd_final);

  ForwardResult<T> out;
  if (want_logits) out.logits = c.hidden * P.token_embedding.transpose();
  if (input.anchor >= 0) out.cls_score = c.hidden.row(input.anchor).dot(P.cls_w.row(0)) + P.cls_b(0, 0);
  return out;
}

template <typename T>
void Transformer<T>::backward(const EncodedInput& input, const ForwardCache<T>& c, const Matrix<T>* dlogits,
                              T dscore, Parameters<T>& G) const {
  const auto len = static_cast<Eigen::Index>(input.size());
  const int d = config_.d_model, heads = config_.n_heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const auto& P = params_;

  Matrix<T> dh_final = Matrix<T>::Zero(len, d);
  if (dlogits && dlogits->size() > 0) {
    dh_final.noalias() += (*dlogits) * P.token_embedding;
    G.token_embedding.noalias() += dlogits->transpose() * c.hidden;
  }
  if (dscore != T(0)) {
    if (input.anchor < 0) throw ConfigError("classification gradient without an anchor position");
    dh_final.row(input.anchor) += dscore * P.cls_w.row(0);
    G.cls_w.row(0) += dscore * c.hidden.row(input.anchor);
    G.cls_b(0, 0) += dscore;
  }
  Matrix<T> dx = layer_norm_backward(dh_final, c.xhat_final, c.rstd_final, P.final_gain, G.final_gain, G.final_bias);

  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& W = P.layers[li];
    auto& GW = G.layers[li];
    const auto& lc = c.layers[li];

    // MLP sublayer.
    Matrix<T> dz = dx.cwiseProduct(lc.drop_mlp);
    GW.out_w.noalias() += lc.g.transpose() * dz;
    GW.out_b.row(0) += dz.colwise().sum();
    Matrix<T> dg = dz * W.out_w.transpose();
    Matrix<T> dhpre = dg.cwiseProduct(lc.hpre.unaryExpr([](T v) { return gelu_grad(v); }));
    GW.fc_w.noalias() += lc.b.transpose() * dhpre;
    GW.fc_b.row(0) += dhpre.colwise().sum();
    Matrix<T> db = dhpre * W.fc_w.transpose();
    dx += layer_norm_backward(db, lc.xhat2, lc.rstd2, W.ln2_gain, GW.ln2_gain, GW.ln2_bias);

    // Attention sublayer.
    Matrix<T> dy = dx.cwiseProduct(lc.drop_attn);
    GW.proj_w.noalias() += lc.ctx.transpose() * dy;
    GW.proj_b.row(0) += dy.colwise().sum();
    Matrix<T> dctx = dy * W.proj_w.transpose();
    Matrix<T> dqkv(len, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const auto& probs = lc.probs[static_cast<std::size_t>(h)];
      auto q = lc.qkv.middleCols(h * dh, dh);
      auto k = lc.qkv.middleCols(d + h * dh, dh);
      auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      auto dout = dctx.middleCols(h * dh, dh);
      Matrix<T> dp = dout * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh) = probs.transpose() * dout;
      Matrix<T> ds(len, len);
      for (Eigen::Index r = 0; r < len; ++r) {
        T dot = dp.row(r).dot(probs.row(r));
        ds.row(r) = probs.row(r).cwiseProduct((dp.row(r).array() - dot).matrix()) * scale;
      }
      dqkv.middleCols(h * dh, dh) = ds * k;
      dqkv.middleCols(d + h * dh, dh) = ds.transpose() * q;
    }
    GW.qkv_w.noalias() += lc.a.transpose() * dqkv;
    GW.qkv_b.row(0) += dqkv.colwise().sum();
    Matrix<T> da = dqkv * W.qkv_w.transpose();
    dx += layer_norm_backward(da, lc.xhat1, lc.rstd1, W.ln1_gain, GW.ln1_gain, GW.ln1_bias);
  }

  dx = dx.cwiseProduct(c.drop_embed);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto i = static_cast<std::size_t>(t);
    G.token_embedding.row(input.tokens[i]) += dx.row(t);
    G.position_embedding.row(input.positions[i]) += dx.row(t);
    G.state_embedding.row(static_cast<int>(input.states[i])) += dx.row(t);
  }
}

template <typename T>
DecoderState<T> Transformer<T>::start(int capacity) const {
  if (capacity <= 0 || capacity > config_.max_len) capacity = config_.max_len;
  DecoderState<T> s;
  s.keys.assign(params_.layers.size(), Matrix<T>(capacity, config_.d_model));
  s.values.assign(params_.layers.size(), Matrix<T>(capacity, config_.d_model));
  return s;
}

template <typename T>
RowVector<T> Transformer<T>::step(DecoderState<T>& s, TokenId token, InputState input_state) const {
  if (s.keys.empty() || s.length >= s.keys.front().rows()) throw ConfigError("decoder state exceeds its capacity");
  if (token < 0 || token >= config_.vocab_size) throw ConfigError("token id out of range: " + std::to_string(token));
  const int d = config_.d_model, heads = config_.n_heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const auto& P = params_;
  const int pos = s.length;

  Matrix<T> x = P.token_embedding.row(token) + P.position_embedding.row(pos) +
                P.state_embedding.row(static_cast<int>(input_state));
  Matrix<T> xhat;
  RowVector<T> rstd;
  for (std::size_t li = 0; li < P.layers.size(); ++li) {
    const auto& W = P.layers[li];
    Matrix<T> a = layer_norm(x, W.ln1_gain, W.ln1_bias, xhat, rstd);
    RowVector<T> qkv = a * W.qkv_w + W.qkv_b;
    s.keys[li].row(pos) = qkv.segment(d, d);
    s.values[li].row(pos) = qkv.segment(2 * d, d);
    RowVector<T> ctx(d);
    for (int h = 0; h < heads; ++h) {
      auto keys = s.keys[li].block(0, h * dh, pos + 1, dh);
      auto vals = s.values[li].block(0, h * dh, pos + 1, dh);
      RowVector<T> scores = (keys * qkv.segment(h * dh, dh).transpose()).transpose() * scale;
      softmax_row_inplace<T>(scores);
      ctx.segment(h * dh, dh) = scores * vals;
    }
    x += ctx * W.proj_w + W.proj_b;
    Matrix<T> b = layer_norm(x, W.ln2_gain, W.ln2_bias, xhat, rstd);
    Matrix<T> hpre = b * W.fc_w + W.fc_b;
    Matrix<T> g = hpre.unaryExpr([](T v) { return gelu(v); });
    x += g * W.out_w + W.out_b;
  }
  Matrix<T> hidden = layer_norm(x, P.final_gain, P.final_bias, xhat, rstd);
  s.length = pos + 1;
  return hidden * P.token_embedding.transpose();
}

template struct Parameters<float>;
template struct Parameters<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace kwdial
