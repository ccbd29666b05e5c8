#pragma once

// Run configuration: flat dotted keys ("train.steps = 500") read from a
// plain text file, overridden by command-line flags, then resolved once.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "invarirank/data.hpp"
#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/training.hpp"

namespace invarirank {

struct EvalConfig {
  std::size_t permutations = 8;
  std::uint64_t seed = 0;
  std::size_t topk = 5;
  std::size_t exposure_k = 5;
  /// Cap on test queries; 0 means all.
  std::size_t max_queries = 0;
  std::vector<InvarianceMode> modes = {InvarianceMode::kFull, InvarianceMode::kAttnOnly,
                                       InvarianceMode::kPosOnly, InvarianceMode::kStandard};
  /// Independent aggregates per query in the bootstrap comparison; 0 disables it.
  std::size_t bootstrap_replicates = 2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  GeneratorConfig data;
  ModelConfig model;  // vocab_size 0 means "take it from the dataset"
  TrainConfig train;
  EvalConfig eval;
  /// Keys given explicitly in a file or flag; section seeds not listed here
  /// follow the run seed.
  std::set<std::string> explicit_keys;

  /// Throws ConfigError for an unknown key or a malformed value.
  void Set(const std::string& key, const std::string& value);
  /// Copies the run seed into section seeds left unset and validates.
  void Resolve();
  /// Every key with its current value.
  std::map<std::string, std::string> Values() const;
  /// "key = value" lines in key order; parses back to the same config.
  std::string Serialize() const;
};

std::vector<std::string> ConfigKeys();

/// Applies "key = value" lines to `config`. '#' starts a comment.
/// Throws ConfigError naming the line.
void ApplyConfigText(RunConfig& config, const std::string& text);
void ApplyConfigFile(RunConfig& config, const std::filesystem::path& path);

/// Parses "a=b" into (a, b); throws ConfigError otherwise.
std::pair<std::string, std::string> SplitAssignment(const std::string& assignment);

}  // namespace invarirank
