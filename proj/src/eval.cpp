#include "invarirank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "invarirank/errors.hpp"
#include "invarirank/training.hpp"
#include "invarirank/util.hpp"

namespace invarirank {

double HitRateAtK(std::span<const int> ranking, std::span<const double> labels, std::size_t k) {
  if (ranking.size() != labels.size()) throw DimensionError("hit rate: ranking and labels differ");
  if (k == 0 || k > ranking.size()) throw ContractError("hit rate: k must be in 1..N");
  for (std::size_t r = 0; r < k; ++r) {
    if (labels[static_cast<std::size_t>(ranking[r])] > 0.0) return 1.0;
  }
  return 0.0;
}

namespace {

// Rank position of every identity; throws when a and b are not rankings of
// the same identity set.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> Positions(std::span<const int> a,
                                                                        std::span<const int> b) {
  if (a.size() != b.size() || !IsPermutation(a) || !IsPermutation(b)) {
    throw ContractError("rankings must be permutations of the same identity set");
  }
  std::vector<std::size_t> pa(a.size()), pb(b.size());
  for (std::size_t r = 0; r < a.size(); ++r) {
    pa[static_cast<std::size_t>(a[r])] = r;
    pb[static_cast<std::size_t>(b[r])] = r;
  }
  return {std::move(pa), std::move(pb)};
}

}  // namespace

double KendallTau(std::span<const int> a, std::span<const int> b) {
  const auto [pa, pb] = Positions(a, b);
  const std::size_t n = pa.size();
  if (n < 2) throw ContractError("kendall tau needs at least two candidates");
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool order_a = pa[i] < pa[j];
      const bool order_b = pb[i] < pb[j];
      if (order_a == order_b) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  return static_cast<double>(concordant - discordant) /
         (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double SpearmanRho(std::span<const int> a, std::span<const int> b) {
  const auto [pa, pb] = Positions(a, b);
  const std::size_t n = pa.size();
  if (n < 2) throw ContractError("spearman rho needs at least two candidates");
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    d2 += d * d;
  }
  const double nd = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nd * (nd * nd - 1.0));
}

double TopKAgreement(std::span<const int> a, std::span<const int> b, std::size_t k) {
  if (a.size() != b.size()) throw ContractError("top-k agreement: rankings differ in length");
  if (k == 0 || k > a.size()) throw ContractError("top-k agreement: k must be in 1..N");
  std::size_t shared = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::find(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(k), a[i]) !=
        b.begin() + static_cast<std::ptrdiff_t>(k)) {
      ++shared;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(k);
}

Permutation BootstrapAggregate(const std::vector<Permutation>& rankings) {
  if (rankings.empty()) throw ContractError("bootstrap: at least one ranking required");
  const std::size_t n = rankings.front().size();
  std::vector<double> total(n, 0.0);
  for (const auto& r : rankings) {
    if (r.size() != n || !IsPermutation(r)) {
      throw ContractError("bootstrap: rankings must share one identity set");
    }
    for (std::size_t pos = 0; pos < n; ++pos) {
      total[static_cast<std::size_t>(r[pos])] += static_cast<double>(pos + 1);
    }
  }
  // Rank() sorts descending with ties to the lower identity; negate the means.
  std::vector<double> negated(n);
  for (std::size_t i = 0; i < n; ++i) {
    negated[i] = -total[i] / static_cast<double>(rankings.size());
  }
  return Rank(negated);
}

Scorer ModelScorer(const ModelParams& params, InvarianceMode mode) {
  return [&params, mode](const LabeledQuery& q, std::span<const int> order) {
    return ScoreCandidates(params, q.query, mode, order);
  };
}

Scorer OracleScorer() {
  return [](const LabeledQuery& q, std::span<const int>) {
    if (q.oracle_scores.size() != q.query.candidates.size()) {
      throw ContractError("oracle scorer: query carries no oracle scores");
    }
    ScoredList out;
    out.scores = q.oracle_scores;
    out.ranking = Rank(out.scores);
    return out;
  };
}

std::vector<Permutation> QueryPermutations(const LabeledQuery& query, std::size_t count,
                                           std::uint64_t seed) {
  const std::size_t n = query.query.candidates.size();
  std::vector<Permutation> perms;
  perms.push_back(IdentityPermutation(n));
  std::mt19937_64 rng(MixSeed(seed, static_cast<std::uint64_t>(query.id)));
  while (perms.size() < count) perms.push_back(RandomPermutation(n, rng));
  perms.resize(count);
  return perms;
}

RobustnessReport PermutationHarness(const Scorer& scorer, std::span<const LabeledQuery> queries,
                                    const HarnessOptions& options, std::string label) {
  if (options.permutations < 2) throw ContractError("harness: needs at least two permutations");
  RobustnessReport report;
  report.label = std::move(label);
  report.per_query.resize(queries.size());
  ParallelFor(queries.size(), [&](std::size_t qi) {
    const LabeledQuery& q = queries[qi];
    const auto perms = QueryPermutations(q, options.permutations, options.seed);
    std::vector<ScoredList> scored;
    for (const auto& order : perms) scored.push_back(scorer(q, order));

    QueryRobustness r;
    r.query_id = q.id;
    const std::size_t n = q.query.candidates.size();
    const std::size_t k = std::min(options.topk, n);
    double pairs = 0.0;
    for (std::size_t a = 0; a < scored.size(); ++a) {
      for (std::size_t b = a + 1; b < scored.size(); ++b) {
        r.tau += KendallTau(scored[a].ranking, scored[b].ranking);
        r.rho += SpearmanRho(scored[a].ranking, scored[b].ranking);
        r.topk += TopKAgreement(scored[a].ranking, scored[b].ranking, k);
        pairs += 1.0;
      }
    }
    r.tau /= pairs;
    r.rho /= pairs;
    r.topk /= pairs;
    for (const auto& s : scored) {
      r.hr5 += HitRateAtK(s.ranking, q.labels, std::min<std::size_t>(5, n));
      r.hr10 += HitRateAtK(s.ranking, q.labels, std::min<std::size_t>(10, n));
      r.ndcg5 += NdcgOfRanking(s.ranking, q.labels, 5);
      r.ndcg10 += NdcgOfRanking(s.ranking, q.labels, 10);
    }
    const double p = static_cast<double>(scored.size());
    r.hr5 /= p;
    r.hr10 /= p;
    r.ndcg5 /= p;
    r.ndcg10 /= p;
    for (std::size_t id = 0; id < n; ++id) {
      double lo = scored[0].scores[id], hi = lo;
      for (const auto& s : scored) {
        lo = std::min(lo, s.scores[id]);
        hi = std::max(hi, s.scores[id]);
      }
      r.max_score_deviation = std::max(r.max_score_deviation, hi - lo);
    }
    report.per_query[qi] = r;
  });

  QueryRobustness& agg = report.aggregate;
  for (const auto& r : report.per_query) {
    agg.tau += r.tau;
    agg.rho += r.rho;
    agg.topk += r.topk;
    agg.hr5 += r.hr5;
    agg.hr10 += r.hr10;
    agg.ndcg5 += r.ndcg5;
    agg.ndcg10 += r.ndcg10;
    agg.max_score_deviation = std::max(agg.max_score_deviation, r.max_score_deviation);
  }
  if (!report.per_query.empty()) {
    const double count = static_cast<double>(report.per_query.size());
    agg.tau /= count;
    agg.rho /= count;
    agg.topk /= count;
    agg.hr5 /= count;
    agg.hr10 /= count;
    agg.ndcg5 /= count;
    agg.ndcg10 /= count;
  }
  return report;
}

double ExposureTable::Fraction(std::size_t slot) const {
  return trials == 0 ? 0.0 : static_cast<double>(hits.at(slot)) / static_cast<double>(trials);
}

double ExposureTable::MeanFraction() const {
  if (hits.empty()) return 0.0;
  std::size_t total = 0;
  for (std::size_t h : hits) total += h;
  return static_cast<double>(total) / (static_cast<double>(trials) * static_cast<double>(hits.size()));
}

double ExposureTable::BinomialStandardError() const {
  const double p = static_cast<double>(k) / static_cast<double>(list_size);
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

ExposureTable ExposureReport(const Scorer& scorer, std::span<const LabeledQuery> queries,
                             std::size_t k, std::size_t permutations, std::uint64_t seed) {
  if (queries.empty()) throw ContractError("exposure: no queries");
  if (permutations < 1) throw ContractError("exposure: needs at least one permutation");
  ExposureTable table;
  table.list_size = queries.front().query.candidates.size();
  table.k = k;
  if (k == 0 || k > table.list_size) throw ContractError("exposure: k must be in 1..K");
  for (const auto& q : queries) {
    if (q.query.candidates.size() != table.list_size) {
      throw ContractError("exposure: every list must have the same length");
    }
  }
  std::vector<std::vector<std::size_t>> per_query(queries.size());
  ParallelFor(queries.size(), [&](std::size_t qi) {
    const LabeledQuery& q = queries[qi];
    std::vector<std::size_t> hits(table.list_size, 0);
    for (const auto& order : QueryPermutations(q, permutations, seed)) {
      const ScoredList scored = scorer(q, order);
      std::vector<bool> in_top(table.list_size, false);
      for (std::size_t r = 0; r < k; ++r) in_top[static_cast<std::size_t>(scored.ranking[r])] = true;
      for (std::size_t slot = 0; slot < table.list_size; ++slot) {
        if (in_top[static_cast<std::size_t>(order[slot])]) ++hits[slot];
      }
    }
    per_query[qi] = std::move(hits);
  });
  table.hits.assign(table.list_size, 0);
  for (const auto& hits : per_query) {
    for (std::size_t s = 0; s < hits.size(); ++s) table.hits[s] += hits[s];
  }
  table.trials = queries.size() * permutations;
  return table;
}

BootstrapReport BootstrapRobustness(const Scorer& scorer, std::span<const LabeledQuery> queries,
                                    std::size_t permutations, std::size_t replicates,
                                    std::uint64_t seed) {
  if (permutations < 1 || replicates < 2) {
    throw ContractError("bootstrap: needs >= 1 permutation and >= 2 replicates");
  }
  if (queries.empty()) throw ContractError("bootstrap: no queries");
  struct PerQuery {
    double aggregate_tau = 0.0;
    double single_tau = 0.0;
    double ndcg10 = 0.0;
  };
  std::vector<PerQuery> results(queries.size());
  ParallelFor(queries.size(), [&](std::size_t qi) {
    const LabeledQuery& q = queries[qi];
    const std::size_t n = q.query.candidates.size();
    std::mt19937_64 rng(MixSeed(MixSeed(seed, 0xB007), static_cast<std::uint64_t>(q.id)));
    std::vector<Permutation> aggregates;
    std::vector<Permutation> singles;
    for (std::size_t rep = 0; rep < replicates; ++rep) {
      std::vector<Permutation> rankings;
      for (std::size_t p = 0; p < permutations; ++p) {
        rankings.push_back(scorer(q, RandomPermutation(n, rng)).ranking);
      }
      singles.insert(singles.end(), rankings.begin(), rankings.end());
      aggregates.push_back(BootstrapAggregate(rankings));
    }
    PerQuery r;
    double pairs = 0.0;
    for (std::size_t a = 0; a < aggregates.size(); ++a) {
      for (std::size_t b = a + 1; b < aggregates.size(); ++b) {
        r.aggregate_tau += KendallTau(aggregates[a], aggregates[b]);
        pairs += 1.0;
      }
    }
    r.aggregate_tau /= pairs;
    pairs = 0.0;
    for (std::size_t a = 0; a < singles.size(); ++a) {
      for (std::size_t b = a + 1; b < singles.size(); ++b) {
        r.single_tau += KendallTau(singles[a], singles[b]);
        pairs += 1.0;
      }
    }
    r.single_tau /= pairs;
    r.ndcg10 = NdcgOfRanking(aggregates.front(), q.labels, 10);
    results[qi] = r;
  });
  BootstrapReport report;
  for (const auto& r : results) {
    report.aggregate_tau += r.aggregate_tau;
    report.single_pass_tau += r.single_tau;
    report.ndcg10 += r.ndcg10;
  }
  const double count = static_cast<double>(results.size());
  report.aggregate_tau /= count;
  report.single_pass_tau /= count;
  report.ndcg10 /= count;
  return report;
}

namespace {

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string RobustnessCsv(std::span<const RobustnessReport> reports) {
  std::ostringstream out;
  out << "label,metric,value\n";
  for (const auto& r : reports) {
    const auto& a = r.aggregate;
    const std::pair<const char*, double> rows[] = {
        {"hr@5", a.hr5},       {"hr@10", a.hr10}, {"ndcg@5", a.ndcg5},
        {"ndcg@10", a.ndcg10}, {"tau", a.tau},    {"rho", a.rho},
        {"t@k", a.topk},       {"max_score_deviation", a.max_score_deviation}};
    for (const auto& [metric, value] : rows) {
      out << r.label << ',' << metric << ',' << Num(value) << '\n';
    }
  }
  return out.str();
}

std::string RobustnessPerQueryCsv(const RobustnessReport& report) {
  std::ostringstream out;
  out << "query_id,tau,rho,t@k,hr@5,hr@10,ndcg@5,ndcg@10,max_score_deviation\n";
  for (const auto& r : report.per_query) {
    out << r.query_id << ',' << Num(r.tau) << ',' << Num(r.rho) << ',' << Num(r.topk) << ','
        << Num(r.hr5) << ',' << Num(r.hr10) << ',' << Num(r.ndcg5) << ',' << Num(r.ndcg10) << ','
        << Num(r.max_score_deviation) << '\n';
  }
  return out.str();
}

std::string ExposureCsv(const ExposureTable& table) {
  std::ostringstream out;
  out << "slot,exposure,hits,trials\n";
  for (std::size_t s = 0; s < table.hits.size(); ++s) {
    out << (s + 1) << ',' << Num(table.Fraction(s)) << ',' << table.hits[s] << ',' << table.trials
        << '\n';
  }
  return out.str();
}

double RandomRankingExpectedNdcg(std::span<const double> labels, std::size_t k) {
  if (labels.empty()) return 0.0;
  std::vector<double> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = Dcg(ideal, k);
  if (idcg == 0.0) return 0.0;
  double mean_gain = 0.0;
  for (double y : labels) mean_gain += y;
  mean_gain /= static_cast<double>(labels.size());
  std::vector<double> expected(labels.size(), mean_gain);
  return Dcg(expected, k) / idcg;
}

}  // namespace invarirank
