#pragma once

// Subcommands of the `invarirank` binary. Each command resolves its
// configuration first, writes resolved_config.txt into the output directory
// and then does its work; identical (config, seed) give identical files.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "invarirank/config.hpp"

namespace invarirank {

struct CommandPaths {
  std::filesystem::path out = "out";
  std::filesystem::path data;        // directory holding {train,validation,test}.jsonl
  std::filesystem::path checkpoint;  // model to evaluate
  std::filesystem::path resume;      // training checkpoint to continue from
  bool oracle = false;               // score with hidden preferences instead of a model
  bool log_wall_clock = false;
};

void CmdGenerate(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
void CmdTrain(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
void CmdEval(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
void CmdInvariance(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
void CmdExposure(const RunConfig& config, const CommandPaths& paths, std::ostream& log);

/// Parses arguments (argv[0] is the program name) and runs one command.
/// Returns 0 on success, 2 for usage and configuration errors, 1 otherwise.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace invarirank
