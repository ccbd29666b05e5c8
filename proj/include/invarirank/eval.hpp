#pragma once

// Effectiveness metrics, permutation-robustness metrics and the
// permutation harness. Rankings are lists of candidate identities, best first.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/scoring.hpp"

namespace invarirank {

/// 1 when any candidate with a positive label is in the top k, else 0.
double HitRateAtK(std::span<const int> ranking, std::span<const double> labels, std::size_t k);

/// (concordant - discordant) / (N (N - 1) / 2) over identity pairs.
double KendallTau(std::span<const int> a, std::span<const int> b);
/// 1 - 6 sum d^2 / (N (N^2 - 1)). Requires N >= 2.
double SpearmanRho(std::span<const int> a, std::span<const int> b);
/// |top-k(a) intersect top-k(b)| / k.
double TopKAgreement(std::span<const int> a, std::span<const int> b, std::size_t k);

/// Mean rank per identity; ascending mean rank, ties to the lower identity.
Permutation BootstrapAggregate(const std::vector<Permutation>& rankings);

/// Scores a query presented in slot order `order`.
using Scorer = std::function<ScoredList(const LabeledQuery&, std::span<const int> order)>;

Scorer ModelScorer(const ModelParams& params, InvarianceMode mode);
/// Ranks by the hidden-preference affinities stored with each query.
Scorer OracleScorer();

/// P presentation orders for one query; the first is the identity.
std::vector<Permutation> QueryPermutations(const LabeledQuery& query, std::size_t count,
                                           std::uint64_t seed);

struct HarnessOptions {
  std::size_t permutations = 8;
  std::uint64_t seed = 0;
  std::size_t topk = 5;
};

struct QueryRobustness {
  std::int64_t query_id = 0;
  double tau = 0.0;
  double rho = 0.0;
  double topk = 0.0;
  double hr5 = 0.0;
  double hr10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  /// Largest spread of any one candidate's score across the permutations.
  double max_score_deviation = 0.0;
};

struct RobustnessReport {
  std::string label;
  std::vector<QueryRobustness> per_query;
  /// Means over queries; max_score_deviation is the maximum instead.
  QueryRobustness aggregate;
};

/// Scores each query under `permutations` seeded orders (the first being the
/// identity), compares rankings over all unordered pairs of permutations and
/// averages per query, then over queries. Throws ContractError for P < 2.
RobustnessReport PermutationHarness(const Scorer& scorer, std::span<const LabeledQuery> queries,
                                    const HarnessOptions& options, std::string label = {});

struct ExposureTable {
  std::size_t list_size = 0;
  std::size_t k = 0;
  std::vector<std::size_t> hits;  // per input slot
  std::size_t trials = 0;         // per slot

  double Fraction(std::size_t slot) const;
  double MeanFraction() const;
  /// sqrt(p (1 - p) / trials) with p = k / list_size.
  double BinomialStandardError() const;
};

/// Tallies, for every input slot, how often its occupant reaches the top k.
ExposureTable ExposureReport(const Scorer& scorer, std::span<const LabeledQuery> queries,
                             std::size_t k, std::size_t permutations, std::uint64_t seed);

struct BootstrapReport {
  /// Mean Kendall tau between independent aggregates of `permutations` orders.
  double aggregate_tau = 0.0;
  /// Mean pairwise Kendall tau of single-pass rankings over the same orders.
  double single_pass_tau = 0.0;
  /// Effectiveness of the first aggregate.
  double ndcg10 = 0.0;
};

/// Each query gets `replicates` disjoint batches of `permutations` fresh
/// orders; each batch is aggregated with BootstrapAggregate.
BootstrapReport BootstrapRobustness(const Scorer& scorer, std::span<const LabeledQuery> queries,
                                    std::size_t permutations, std::size_t replicates,
                                    std::uint64_t seed);

/// Long-format CSV: "label,metric,value", one row per report and metric.
std::string RobustnessCsv(std::span<const RobustnessReport> reports);
std::string RobustnessPerQueryCsv(const RobustnessReport& report);
/// "slot,exposure,hits,trials", one row per slot (1-based).
std::string ExposureCsv(const ExposureTable& table);

/// Exact expected nDCG@k of a uniformly random ranking of `labels`.
double RandomRankingExpectedNdcg(std::span<const double> labels, std::size_t k);

}  // namespace invarirank
