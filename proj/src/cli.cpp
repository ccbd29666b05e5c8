#include "invarirank/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "invarirank/checkpoint.hpp"
#include "invarirank/data.hpp"
#include "invarirank/errors.hpp"
#include "invarirank/eval.hpp"
#include "invarirank/training.hpp"

namespace invarirank {
namespace {

namespace fs = std::filesystem;

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void PrepareOutput(const RunConfig& config, const CommandPaths& paths) {
  fs::create_directories(paths.out);
  WriteText(paths.out / "resolved_config.txt", config.Serialize());
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

fs::path RequireDataDir(const CommandPaths& paths) {
  if (paths.data.empty()) throw ConfigError("--data is required for this command");
  return paths.data;
}

Dataset LoadSplit(const CommandPaths& paths, const std::string& split) {
  return ReadDataset(RequireDataDir(paths) / (split + ".jsonl"));
}

std::vector<LabeledQuery> LoadQueries(const CommandPaths& paths, const std::string& split,
                                      std::size_t max_queries) {
  const Dataset d = LoadSplit(paths, split);
  auto queries = LabeledQueries(d, Vocabulary(d.config));
  if (max_queries > 0 && queries.size() > max_queries) queries.resize(max_queries);
  return queries;
}

void CheckVocabulary(const ModelConfig& model, const CommandPaths& paths) {
  const Dataset d = LoadSplit(paths, "test");
  const int needed = Vocabulary(d.config).size();
  if (model.vocab_size < needed) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) +
                      " is smaller than the dataset vocabulary (" + std::to_string(needed) + ")");
  }
}

ModelParams LoadModel(const CommandPaths& paths) {
  if (paths.checkpoint.empty()) throw ConfigError("--checkpoint is required unless --scorer oracle");
  ModelParams params = ParamsFromCheckpoint(ReadCheckpoint(paths.checkpoint));
  CheckVocabulary(params.config, paths);
  return params;
}

std::string FilterMetrics(const std::string& csv, std::initializer_list<std::string_view> keep) {
  std::istringstream in(csv);
  std::string line, out;
  std::getline(in, line);
  out = line + '\n';
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const std::string metric = line.substr(first + 1, second - first - 1);
    for (auto k : keep) {
      if (metric == k) {
        out += line + '\n';
        break;
      }
    }
  }
  return out;
}

// One report per configured mode, or a single oracle report.
std::vector<RobustnessReport> RunHarness(const RunConfig& config, const CommandPaths& paths,
                                         std::span<const LabeledQuery> queries) {
  HarnessOptions options;
  options.permutations = config.eval.permutations;
  options.seed = config.eval.seed;
  options.topk = config.eval.topk;
  std::vector<RobustnessReport> reports;
  if (paths.oracle) {
    reports.push_back(PermutationHarness(OracleScorer(), queries, options, "oracle"));
    return reports;
  }
  const ModelParams params = LoadModel(paths);
  for (InvarianceMode mode : config.eval.modes) {
    reports.push_back(
        PermutationHarness(ModelScorer(params, mode), queries, options, std::string(ModeName(mode))));
  }
  return reports;
}

}  // namespace

void CmdGenerate(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  PrepareOutput(config, paths);
  const DatasetSplits splits = GenerateSynthetic(config.data);
  for (const Dataset* d : {&splits.train, &splits.validation, &splits.test}) {
    WriteDataset(paths.out / (d->split + ".jsonl"), *d);
    log << "wrote " << d->queries.size() << " " << d->split << " queries\n";
  }
  log << "vocabulary size " << Vocabulary(config.data).size() << "\n";
}

void CmdTrain(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  PrepareOutput(config, paths);
  const auto train = LoadQueries(paths, "train", 0);
  const auto validation = LoadQueries(paths, "validation", 0);

  TrainState state;
  if (!paths.resume.empty()) {
    state = StateFromCheckpoint(ReadCheckpoint(paths.resume));
    if (!(state.params.config == config.model)) {
      throw ConfigError("resume checkpoint was trained with a different model config");
    }
    log << "resuming from step " << state.step << "\n";
  } else {
    state.params = InitParams(config.model);
  }
  CheckVocabulary(state.params.config, paths);

  auto on_checkpoint = [&](const TrainState& s) {
    const fs::path p = paths.out / ("checkpoint_step" + std::to_string(s.step) + ".bin");
    WriteCheckpoint(p, CheckpointFromState(s));
  };
  auto on_entry = [&](const TrainLogEntry& e) {
    if (e.validation_ndcg10) {
      log << "step " << e.step + 1 << "  loss " << Fixed(e.loss) << "  val ndcg@10 "
          << Fixed(*e.validation_ndcg10) << "\n";
      log.flush();
    }
  };
  const TrainLog train_log = Train(state, train, validation, config.train, on_checkpoint, on_entry);
  WriteCheckpoint(paths.out / "checkpoint.bin", CheckpointFromState(state));
  WriteText(paths.out / "train_log.jsonl", TrainLogJsonl(train_log, paths.log_wall_clock));
  log << "trained to step " << state.step << " (" << ModeName(config.train.mode) << " mode)\n";
}

void CmdEval(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  PrepareOutput(config, paths);
  const auto queries = LoadQueries(paths, "test", config.eval.max_queries);
  const auto reports = RunHarness(config, paths, queries);
  WriteText(paths.out / "eval.csv",
            FilterMetrics(RobustnessCsv(reports), {"hr@5", "hr@10", "ndcg@5", "ndcg@10"}));
  log << "label      hr@5    hr@10   ndcg@5  ndcg@10\n";
  for (const auto& r : reports) {
    std::string label = r.label;
    label.resize(10, ' ');
    log << label << " " << Fixed(r.aggregate.hr5) << "  " << Fixed(r.aggregate.hr10) << "  "
        << Fixed(r.aggregate.ndcg5) << "  " << Fixed(r.aggregate.ndcg10) << "\n";
  }
}

void CmdInvariance(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  PrepareOutput(config, paths);
  const auto queries = LoadQueries(paths, "test", config.eval.max_queries);
  const auto reports = RunHarness(config, paths, queries);
  WriteText(paths.out / "robustness.csv",
            FilterMetrics(RobustnessCsv(reports), {"tau", "rho", "t@k", "max_score_deviation"}));
  for (const auto& r : reports) {
    WriteText(paths.out / ("robustness_" + r.label + "_per_query.csv"), RobustnessPerQueryCsv(r));
  }
  log << "label      tau     rho     t@k     max_score_deviation\n";
  for (const auto& r : reports) {
    std::string label = r.label;
    label.resize(10, ' ');
    char dev[32];
    std::snprintf(dev, sizeof(dev), "%.3e", r.aggregate.max_score_deviation);
    log << label << " " << Fixed(r.aggregate.tau) << "  " << Fixed(r.aggregate.rho) << "  "
        << Fixed(r.aggregate.topk) << "  " << dev << "\n";
  }

  if (config.eval.bootstrap_replicates >= 2 && !paths.oracle) {
    const ModelParams params = LoadModel(paths);
    std::ostringstream csv;
    csv << "label,aggregate_tau,single_pass_tau,ndcg@10\n";
    for (InvarianceMode mode : config.eval.modes) {
      const BootstrapReport b =
          BootstrapRobustness(ModelScorer(params, mode), queries, config.eval.permutations,
                              config.eval.bootstrap_replicates, config.eval.seed);
      char row[160];
      std::snprintf(row, sizeof(row), "%s,%.17g,%.17g,%.17g\n", std::string(ModeName(mode)).c_str(),
                    b.aggregate_tau, b.single_pass_tau, b.ndcg10);
      csv << row;
      log << "bootstrap " << ModeName(mode) << ": aggregate tau " << Fixed(b.aggregate_tau)
          << ", single-pass tau " << Fixed(b.single_pass_tau) << "\n";
    }
    WriteText(paths.out / "bootstrap.csv", csv.str());
  }
}

void CmdExposure(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  PrepareOutput(config, paths);
  const auto queries = LoadQueries(paths, "test", config.eval.max_queries);
  auto report = [&](const Scorer& scorer, const std::string& label) {
    const ExposureTable t = ExposureReport(scorer, queries, config.eval.exposure_k,
                                           config.eval.permutations, config.eval.seed);
    WriteText(paths.out / ("exposure_" + label + ".csv"), ExposureCsv(t));
    double lo = 1.0, hi = 0.0;
    for (std::size_t s = 0; s < t.list_size; ++s) {
      lo = std::min(lo, t.Fraction(s));
      hi = std::max(hi, t.Fraction(s));
    }
    log << label << ": slot exposure min " << Fixed(lo) << " max " << Fixed(hi) << " mean "
        << Fixed(t.MeanFraction()) << " (binomial SE " << Fixed(t.BinomialStandardError())
        << ", " << t.trials << " trials per slot)\n";
  };
  if (paths.oracle) {
    report(OracleScorer(), "oracle");
    return;
  }
  const ModelParams params = LoadModel(paths);
  for (InvarianceMode mode : config.eval.modes) {
    report(ModelScorer(params, mode), std::string(ModeName(mode)));
  }
}

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Permutation-invariant listwise reranking experiments", "invarirank"};
  app.require_subcommand(1);

  std::string config_file, mode, scorer = "model";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> permutations, k;
  std::optional<int> steps;
  std::vector<std::string> overrides;
  CommandPaths paths;

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&, const CommandPaths&, std::ostream&);
  };
  const Command commands[] = {
      {"generate", "Generate synthetic train/validation/test datasets", CmdGenerate},
      {"train", "Train a reranker and write checkpoints and a training log", CmdTrain},
      {"eval", "Effectiveness metrics averaged over candidate permutations", CmdEval},
      {"invariance", "Permutation robustness report per attention mode", CmdInvariance},
      {"exposure", "Top-k exposure per input slot", CmdExposure},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_file, "Config file of key = value lines")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Run seed (section seeds default to it)");
    sub->add_option("--mode", mode, "standard|pos|attn|full (train mode, or the eval mode)");
    sub->add_option("--permutations", permutations, "Permutations per query");
    sub->add_option("--k", k, "Cutoff for top-k agreement and exposure");
    sub->add_option("--out", paths.out, "Output directory");
    sub->add_option("--set", overrides, "Override a config key: key=value");
    if (std::string(c.name) != "generate") {
      sub->add_option("--data", paths.data, "Directory with train/validation/test .jsonl files")
          ->required();
    }
    if (std::string(c.name) == "train") {
      sub->add_option("--steps", steps, "Optimizer steps");
      sub->add_option("--resume", paths.resume, "Continue from a training checkpoint")
          ->check(CLI::ExistingFile);
      sub->add_flag("--log-wall-clock", paths.log_wall_clock,
                    "Append elapsed time to the training log (not reproducible)");
    }
    if (std::string(c.name) == "eval" || std::string(c.name) == "invariance" ||
        std::string(c.name) == "exposure") {
      sub->add_option("--checkpoint", paths.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
      sub->add_option("--scorer", scorer, "model or oracle")
          ->check(CLI::IsMember({"model", "oracle"}));
    }
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    RunConfig config;
    if (!config_file.empty()) ApplyConfigFile(config, config_file);
    for (const auto& o : overrides) {
      const auto [key, value] = SplitAssignment(o);
      config.Set(key, value);
    }
    if (seed) config.Set("seed", std::to_string(*seed));
    if (!mode.empty()) config.Set(name == "train" ? "train.mode" : "eval.modes", mode);
    if (permutations) config.Set("eval.permutations", std::to_string(*permutations));
    if (k) {
      config.Set("eval.topk", std::to_string(*k));
      config.Set("eval.exposure_k", std::to_string(*k));
    }
    if (steps) config.Set("train.steps", std::to_string(*steps));
    config.Resolve();
    paths.oracle = scorer == "oracle";

    for (const auto& c : commands) {
      if (name == c.name) c.run(config, paths, out);
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "invarirank " << name << ": usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "invarirank " << name << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace invarirank
