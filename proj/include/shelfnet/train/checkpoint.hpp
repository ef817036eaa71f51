#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/network.hpp"
#include "shelfnet/tensor/optim.hpp"

namespace shelfnet::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian values
};

// File layout:
//   "SHLF" | u32 version | u32 len + architecture JSON | u64 iteration |
//   u32 len + state JSON | u32 count | count * tensor | u32 CRC32
// with tensor = u32 len + name | u8 dtype | u8 rank (4) | 4 * u32 dims |
// payload. The CRC covers every preceding byte.
//
// Tensor names: "param/<id>" for each distinct parameter storage (a shared
// kernel is stored once), "bn/<state>/mean" and "bn/<state>/var" for running
// statistics, "velocity/<id>" for optimizer momentum buffers.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string arch_json;
  std::uint64_t iteration = 0;
  nlohmann::json state = nlohmann::json::object();  // forward counter, seeds, sampler position
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// CorruptFileError on bad magic, truncation or checksum mismatch;
// VersionError on an unknown format version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
Checkpoint capture(const arch::ExecutableNet<T>& net, const SgdOptimizer<T>& opt, std::uint64_t iteration);

// All-or-nothing: everything is checked (architecture, names, dtypes,
// shapes) before any value is written. A differing architecture is a
// ConfigError; a missing tensor is a NotFoundError.
template <typename T>
void restore(const Checkpoint& ckpt, arch::ExecutableNet<T>& net, SgdOptimizer<T>& opt);

}  // namespace shelfnet::train
