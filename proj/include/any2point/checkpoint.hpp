#pragma once

// Portable checkpoint: a directory holding manifest.json and tensors.bin.
// tensors.bin concatenates little-endian float32 payloads, each starting on a
// 64-byte boundary. The manifest registers every tensor by name with shape,
// dtype, byte offset, byte length and CRC32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "any2point/tensor.hpp"

namespace a2p {

inline constexpr int kTensorAlignment = 64;
inline constexpr const char* kCheckpointFormat = "a2p-checkpoint";

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;  // product == value.size(); last dim == value.cols()
  Mat value;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  nlohmann::json flags = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Writes manifest.json + tensors.bin under `dir` (created if missing).
/// Values are narrowed to float32.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

/// Reads and verifies a checkpoint. Throws ManifestError, ShapeError or
/// ChecksumError naming the offending tensor.
Checkpoint load_checkpoint_file(const std::filesystem::path& dir);

struct ValidationLine {
  std::string tensor;
  bool ok = true;
  std::string message;
};

/// Re-verifies every CRC32 and shape; never throws for per-tensor problems.
std::vector<ValidationLine> validate_checkpoint(const std::filesystem::path& dir);

std::uint32_t crc32_of(const void* data, std::size_t bytes);
std::string sha256_hex(const void* data, std::size_t bytes);

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(const void* data, std::size_t bytes);
  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace a2p
