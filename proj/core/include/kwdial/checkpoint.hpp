#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kwdial/error.hpp"
#include "kwdial/model.hpp"
#include "kwdial/vocab.hpp"

namespace kwdial {

// On-disk layout (all integers little-endian):
//   magic "KWDCKPT1" (8 bytes), u32 format version,
//   u64-length-prefixed UTF-8 blocks: config JSON, vocabulary (one token per
//   line), metadata JSON,
//   u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
//   u64 dims[ndim], raw f32 values in row-major order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  CheckpointError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};
class UnrecognizedFormat : public CheckpointError {
 public:
  explicit UnrecognizedFormat(const std::string& what) : CheckpointError("unrecognized_format", what) {}
};
class VersionMismatch : public CheckpointError {
 public:
  explicit VersionMismatch(const std::string& what) : CheckpointError("version_mismatch", what) {}
};
class ShapeMismatch : public CheckpointError {
 public:
  ShapeMismatch(std::string tensor, const std::string& what)
      : CheckpointError("shape_mismatch", what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};
class TruncatedCheckpoint : public CheckpointError {
 public:
  explicit TruncatedCheckpoint(const std::string& what) : CheckpointError("truncated", what) {}
};

// Free-form training metadata; the keys below are always written.
struct CheckpointMeta {
  std::string model_class = "no_kw";
  int epoch = 0;
  std::uint64_t seed = 0;
  double alpha = 1.0, beta = 1.0, gamma = 0.0;
  std::string extra_json = "{}";  // anything else, merged under "extra"
};

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  CheckpointMeta meta;
  Parameters<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const ModelConfig& config, const Vocabulary& vocab, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// When `expected` is given its dimensions must match the stored tensors.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace kwdial
