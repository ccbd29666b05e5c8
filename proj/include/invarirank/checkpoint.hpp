#pragma once

// Versioned binary container holding a model config, a step counter and
// named float64 blobs (parameters plus optional optimizer moments).
//
//   magic "IRNKCKPT" | u32 version | u64 header bytes | header JSON
//   | u32 blob count | per blob: u32 name bytes, name, u32 rank,
//   u64 extents..., f64 values...
//
// Integers and doubles are little-endian. The header JSON has sorted keys,
// so identical contents always serialize to identical bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "invarirank/model.hpp"

namespace invarirank {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> blobs;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void WriteCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws VersionError for a foreign magic or version, ParseError on truncation.
Checkpoint ReadCheckpoint(const std::filesystem::path& path);

/// Parameters are the blobs without an "adam." prefix.
Checkpoint CheckpointFromParams(const ModelParams& params, std::int64_t step);
ModelParams ParamsFromCheckpoint(const Checkpoint& checkpoint);

}  // namespace invarirank
