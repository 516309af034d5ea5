#include "kwdial/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kwdial {
namespace {

constexpr char kMagic[8] = {'K', 'W', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename U>
  void put(U v) {
    v = to_le(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void block(const std::string& s) {
    put<std::uint64_t>(s.size());
    bytes(s);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_le(v);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string block(const char* what) { return bytes(get<std::uint64_t>(what), what); }
  const char* raw(std::size_t n, const char* what) {
    need(n, what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw TruncatedCheckpoint(std::string("checkpoint truncated while reading ") + what);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string meta_json(const CheckpointMeta& m) {
  nlohmann::ordered_json j;
  j["model_class"] = m.model_class;
  j["epoch"] = m.epoch;
  j["seed"] = m.seed;
  j["alpha"] = m.alpha;
  j["beta"] = m.beta;
  j["gamma"] = m.gamma;
  j["extra"] = nlohmann::ordered_json::parse(m.extra_json.empty() ? "{}" : m.extra_json);
  return j.dump();
}

CheckpointMeta parse_meta(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    CheckpointMeta m;
    m.model_class = j.at("model_class").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.alpha = j.at("alpha").get<double>();
    m.beta = j.at("beta").get<double>();
    m.gamma = j.at("gamma").get<double>();
    m.extra_json = j.contains("extra") ? j["extra"].dump() : "{}";
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw UnrecognizedFormat(std::string("bad checkpoint metadata: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const ModelConfig& config, const Vocabulary& vocab, const CheckpointMeta& meta) {
  std::ostringstream buf(std::ios::binary);
  Writer w(buf);
  buf.write(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.block(config.to_json());
  std::string vocab_text;
  for (const auto& t : vocab.tokens()) {
    vocab_text += t;
    vocab_text += '\n';
  }
  w.block(vocab_text);
  w.block(meta_json(meta));
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Matrix<float>&) { ++count; });
  w.put<std::uint32_t>(count);
  params.visit([&](const std::string& name, const Matrix<float>& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.put<float>(m.data()[i]);
  });

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    auto data = buf.str();
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("checkpoint write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize checkpoint " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  save_checkpoint(path, c.params, c.config, c.vocab, c.meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw UnrecognizedFormat("unrecognized format: " + path.string() + " is not a kwdial checkpoint");
  }
  Reader r(data.substr(sizeof(kMagic)));
  auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config = ModelConfig::from_json(r.block("config"));
  {
    std::vector<std::string> tokens;
    std::istringstream vs(r.block("vocabulary"));
    std::string line;
    while (std::getline(vs, line)) tokens.push_back(line);
    ck.vocab = Vocabulary::from_tokens(tokens);
  }
  ck.meta = parse_meta(r.block("metadata"));
  if (static_cast<std::size_t>(ck.config.vocab_size) != ck.vocab.size()) {
    throw ShapeMismatch("tok_emb", "config vocab_size disagrees with stored vocabulary");
  }

  const ModelConfig& target = expected ? *expected : ck.config;
  ModelConfig shape_config = target;
  shape_config.vocab_size = expected && expected->vocab_size > 0 ? expected->vocab_size : ck.config.vocab_size;
  ck.params = Parameters<float>::zeros(shape_config);

  auto count = r.get<std::uint32_t>("tensor count");
  std::uint32_t expected_count = 0;
  ck.params.visit([&](const std::string&, const Matrix<float>&) { ++expected_count; });
  std::uint32_t seen = 0;
  ck.params.visit([&](const std::string& name, Matrix<float>& m) {
    if (seen >= count) throw ShapeMismatch(name, "checkpoint is missing tensor " + name);
    auto name_len = r.get<std::uint32_t>("tensor name length");
    auto stored = r.bytes(name_len, "tensor name");
    if (stored != name) throw ShapeMismatch(name, "expected tensor " + name + ", found " + stored);
    auto ndim = r.get<std::uint32_t>("tensor rank");
    if (ndim != 2) throw ShapeMismatch(name, "tensor " + name + " has rank " + std::to_string(ndim));
    auto rows = r.get<std::uint64_t>("tensor dims");
    auto cols = r.get<std::uint64_t>("tensor dims");
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw ShapeMismatch(name, "shape mismatch for tensor " + name + ": stored " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()));
    }
    const auto n = static_cast<std::size_t>(m.size());
    const char* raw = r.raw(n * sizeof(float), "tensor data");
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, raw + i * sizeof(float), sizeof(float));
      m.data()[i] = to_le(v);
    }
    ++seen;
  });
  if (count != expected_count) {
    throw ShapeMismatch("", "checkpoint holds " + std::to_string(count) + " tensors, expected " +
                                std::to_string(expected_count));
  }
  if (expected) {
    auto e = *expected;
    e.vocab_size = ck.config.vocab_size;
    e.dropout = ck.config.dropout;
    if (!(e == ck.config)) throw ShapeMismatch("", "checkpoint config differs from the expected config");
  }
  return ck;
}

}  // namespace kwdial
