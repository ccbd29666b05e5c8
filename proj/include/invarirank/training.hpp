#pragma once

// Listwise LambdaRank training: pairwise logistic loss over candidate
// scores, each pair weighted by the |nDCG change| of swapping it in the
// current predicted ranking. Optimized with AdamW and linear warmup.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "invarirank/checkpoint.hpp"
#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/numerics/tensor.hpp"
#include "invarirank/scoring.hpp"

namespace invarirank {

/// sum_{r <= k} gain_r / log2(r + 1), gains listed best rank first.
double Dcg(std::span<const double> gains_in_rank_order, std::size_t k);

/// nDCG@k of `ranking` (identities best first) with gain = label.
/// Zero when the ideal DCG is zero.
double NdcgOfRanking(std::span<const int> ranking, std::span<const double> labels, std::size_t k);

/// nDCG@k of the ranking induced by `scores` under Rank().
double NdcgAtK(std::span<const double> scores, std::span<const double> labels, std::size_t k);

/// |nDCG(current ranking with i and j swapped) - nDCG(current ranking)| over
/// the full list. Requires i != j.
double DeltaNdcg(std::span<const double> scores, std::span<const double> labels, std::size_t i,
                 std::size_t j);

/// Preference pairs (winner has the higher label) with frozen |delta nDCG| weights.
struct LambdaPairs {
  std::vector<std::size_t> winners;
  std::vector<std::size_t> losers;
  std::vector<double> weights;

  bool empty() const { return winners.empty(); }
};

LambdaPairs BuildLambdaPairs(std::span<const double> scores, std::span<const double> labels);

/// Mean over preference pairs of |dNDCG| * log(1 + exp(-sigma (s_i - s_j))).
/// Returns nullopt when the list has no preference pair (skip the example).
std::optional<numerics::Tensor> LambdaRankLoss(const numerics::Tensor& scores,
                                               std::span<const double> labels, double sigma);

/// Plain-value form of LambdaRankLoss.
std::optional<double> LambdaRankLossValue(std::span<const double> scores,
                                          std::span<const double> labels, double sigma);

struct TrainConfig {
  int steps = 500;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.05;
  double sigma = 1.0;
  InvarianceMode mode = InvarianceMode::kFull;
  std::uint64_t seed = 0;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Validation nDCG@10 every this many steps (and at the last step); 0 disables.
  int eval_interval = 100;
  /// Cap on validation queries per evaluation; 0 means all.
  int eval_max_queries = 0;
  /// Checkpoint callback every this many steps; 0 disables.
  int checkpoint_interval = 0;
  /// Present each training example's candidates in a seeded random order
  /// instead of canonical (ascending item id) order.
  bool shuffle_candidates = false;
  std::uint64_t order_seed = 0;

  void Validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

struct TrainState {
  ModelParams params;
  AdamState optimizer;
  std::int64_t step = 0;
};

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
  int examples = 0;
  int skipped = 0;
  std::optional<double> validation_ndcg10;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  double wall_clock_seconds = 0.0;
};

/// Learning rate for 0-based `step_index`: linear ramp over the first
/// floor(warmup_fraction * steps) steps, then constant.
double LearningRateAt(std::int64_t step_index, const TrainConfig& config);

/// One AdamW update. Returns the pre-clipping global gradient norm.
/// Throws NumericError for non-finite gradients.
double OptimizerStep(ModelParams& params, std::vector<std::vector<double>>& grads,
                     std::int64_t step_index, const TrainConfig& config, AdamState& state);

/// Loss and parameter gradients of one example under `mode`; nullopt when
/// the example has no preference pair.
struct ExampleGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
std::optional<ExampleGradient> ComputeExampleGradient(const ModelParams& params,
                                                      const LabeledQuery& example,
                                                      std::span<const int> order,
                                                      InvarianceMode mode, double sigma);

/// Mean validation nDCG@10 with candidates in canonical order.
double ValidationNdcg(const ModelParams& params, std::span<const LabeledQuery> queries,
                      InvarianceMode mode, int max_queries);

/// Runs optimizer steps state.step .. config.steps-1. Example selection and
/// candidate order are pure functions of (seed, step), so a run resumed
/// from a checkpoint continues exactly as an uninterrupted one.
TrainLog Train(TrainState& state, std::span<const LabeledQuery> train,
               std::span<const LabeledQuery> validation, const TrainConfig& config,
               const std::function<void(const TrainState&)>& on_checkpoint = {},
               const std::function<void(const TrainLogEntry&)>& on_entry = {});

/// Checkpoint with parameters and optimizer moments.
Checkpoint CheckpointFromState(const TrainState& state);
TrainState StateFromCheckpoint(const Checkpoint& checkpoint);

/// One JSON object per entry, newline terminated.
std::string TrainLogJsonl(const TrainLog& log, bool include_wall_clock);

}  // namespace invarirank
