#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "invarirank/errors.hpp"
#include "invarirank/eval.hpp"
#include "invarirank/training.hpp"
#include "invarirank/util.hpp"
#include "test_support.hpp"

namespace invarirank {
namespace {

double BruteTau(const Permutation& a, const Permutation& b) {
  const std::size_t n = a.size();
  std::vector<int> pa(n), pb(n);
  for (std::size_t r = 0; r < n; ++r) {
    pa[static_cast<std::size_t>(a[r])] = static_cast<int>(r);
    pb[static_cast<std::size_t>(b[r])] = static_cast<int>(r);
  }
  int c = 0, d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int s = (pa[i] - pa[j]) * (pb[i] - pb[j]);
      (s > 0 ? c : d) += 1;
    }
  }
  return static_cast<double>(c - d) / (static_cast<double>(n * (n - 1)) / 2.0);
}

double BruteRho(const Permutation& a, const Permutation& b) {
  const std::size_t n = a.size();
  std::vector<double> ra(n), rb(n);
  for (std::size_t r = 0; r < n; ++r) {
    ra[static_cast<std::size_t>(a[r])] = static_cast<double>(r);
    rb[static_cast<std::size_t>(b[r])] = static_cast<double>(r);
  }
  // Pearson correlation of the rank vectors.
  const double mean = (static_cast<double>(n) - 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  return num / std::sqrt(da * db);
}

Scorer FixedScorer(std::vector<double> scores) {
  return [scores](const LabeledQuery&, std::span<const int>) {
    ScoredList s;
    s.scores = scores;
    s.ranking = Rank(scores);
    return s;
  };
}

std::vector<LabeledQuery> RandomQueries(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledQuery> qs;
  for (std::size_t i = 0; i < count; ++i) {
    qs.push_back(testing::RandomLabeledQuery(rng, 40, n, 3, static_cast<std::int64_t>(i)));
  }
  return qs;
}

TEST(HitRateTest, Examples) {
  std::vector<double> labels(10, 0.0);
  labels[5] = 1.0;
  const Permutation ranking = IdentityPermutation(10);  // positive at rank 6
  EXPECT_EQ(HitRateAtK(ranking, labels, 5), 0.0);
  EXPECT_EQ(HitRateAtK(ranking, labels, 10), 1.0);
  EXPECT_EQ(HitRateAtK(ranking, labels, 6), 1.0);
}

TEST(KendallTauTest, Examples) {
  EXPECT_NEAR(KendallTau(Permutation{0, 1, 2, 3}, Permutation{0, 2, 1, 3}), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(KendallTau(Permutation{0, 1, 2, 3}, Permutation{0, 1, 2, 3}), 1.0);
  EXPECT_EQ(KendallTau(Permutation{0, 1, 2, 3}, Permutation{3, 2, 1, 0}), -1.0);
}

TEST(SpearmanRhoTest, Examples) {
  EXPECT_NEAR(SpearmanRho(Permutation{0, 1, 2}, Permutation{0, 2, 1}), 0.5, 1e-12);
  EXPECT_EQ(SpearmanRho(Permutation{0, 1, 2, 3, 4}, Permutation{4, 3, 2, 1, 0}), -1.0);
}

TEST(RankCorrelationTest, MatchesBruteForceOnRandomPairs) {
  std::mt19937_64 rng(11);
  for (std::size_t n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 30; ++trial) {
      const Permutation a = RandomPermutation(n, rng);
      const Permutation b = RandomPermutation(n, rng);
      EXPECT_NEAR(KendallTau(a, b), BruteTau(a, b), 1e-12);
      EXPECT_NEAR(SpearmanRho(a, b), BruteRho(a, b), 1e-12);
      EXPECT_NEAR(KendallTau(a, b), KendallTau(b, a), 1e-15);
      EXPECT_EQ(KendallTau(a, a), 1.0);
    }
  }
}

TEST(TopKAgreementTest, Examples) {
  EXPECT_NEAR(TopKAgreement(Permutation{0, 1, 2, 3, 4, 5, 6, 7}, Permutation{0, 1, 2, 5, 6, 3, 4, 7}, 5),
              0.6, 1e-12);
  EXPECT_EQ(TopKAgreement(Permutation{0, 1, 2}, Permutation{2, 1, 0}, 3), 1.0);
  EXPECT_EQ(TopKAgreement(Permutation{0, 1, 2, 3}, Permutation{2, 3, 0, 1}, 2), 0.0);
}

TEST(BootstrapAggregateTest, Examples) {
  EXPECT_EQ(BootstrapAggregate({{0, 1, 2}, {1, 0, 2}}), (Permutation{0, 1, 2}));
  EXPECT_EQ(BootstrapAggregate({{2, 0, 1}}), (Permutation{2, 0, 1}));
  EXPECT_EQ(BootstrapAggregate({{3, 1, 0, 2}, {3, 1, 0, 2}, {3, 1, 0, 2}}), (Permutation{3, 1, 0, 2}));
}

TEST(QueryPermutationsTest, FirstIsIdentityAndAllAreBijections) {
  LabeledQuery q;
  q.id = 17;
  q.query.candidates.assign(6, {7});
  const auto perms = QueryPermutations(q, 5, 3);
  ASSERT_EQ(perms.size(), 5u);
  EXPECT_EQ(perms[0], IdentityPermutation(6));
  for (const auto& p : perms) {
    Permutation sorted = p;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, IdentityPermutation(6));
  }
  EXPECT_EQ(QueryPermutations(q, 5, 3), perms);
}

TEST(PermutationHarnessTest, OrderBlindScorerIsPerfectlyRobust) {
  const auto qs = RandomQueries(3, 6, 1);
  HarnessOptions opt;
  opt.permutations = 2;
  const auto report = PermutationHarness(FixedScorer({-1, -2, -3, -4, -5, -6}), qs, opt, "fixed");
  EXPECT_EQ(report.label, "fixed");
  EXPECT_EQ(report.aggregate.tau, 1.0);
  EXPECT_EQ(report.aggregate.rho, 1.0);
  EXPECT_EQ(report.aggregate.topk, 1.0);
  EXPECT_EQ(report.aggregate.max_score_deviation, 0.0);
  // Labels put positives at identities 0 and 3; identity 0 ranks first.
  EXPECT_EQ(report.aggregate.hr5, 1.0);
}

TEST(PermutationHarnessTest, FewerThanTwoPermutationsIsContractError) {
  const auto qs = RandomQueries(1, 4, 2);
  HarnessOptions opt;
  opt.permutations = 1;
  EXPECT_THROW(PermutationHarness(FixedScorer({0, 0, 0, 0}), qs, opt), ContractError);
}

TEST(PermutationHarnessTest, FullModelIsInvariantAndStandardIsNot) {
  const ModelParams p = InitParams(testing::TinyConfig(3));
  const auto qs = RandomQueries(4, 6, 3);
  HarnessOptions opt;
  opt.permutations = 6;
  const auto full = PermutationHarness(ModelScorer(p, InvarianceMode::kFull), qs, opt);
  EXPECT_LE(full.aggregate.max_score_deviation, 1e-10);
  EXPECT_EQ(full.aggregate.tau, 1.0);
  EXPECT_EQ(full.aggregate.rho, 1.0);
  EXPECT_EQ(full.aggregate.topk, 1.0);
  const auto standard = PermutationHarness(ModelScorer(p, InvarianceMode::kStandard), qs, opt);
  EXPECT_LT(standard.aggregate.tau, 1.0);
  EXPECT_GT(standard.aggregate.max_score_deviation, 1e-6);
}

TEST(PermutationHarnessTest, PerQueryMetricsAverageToAggregate) {
  const ModelParams p = InitParams(testing::TinyConfig(4));
  const auto qs = RandomQueries(5, 5, 4);
  const auto r = PermutationHarness(ModelScorer(p, InvarianceMode::kStandard), qs, {});
  double tau = 0.0, deviation = 0.0;
  for (const auto& q : r.per_query) {
    tau += q.tau;
    deviation = std::max(deviation, q.max_score_deviation);
  }
  EXPECT_NEAR(r.aggregate.tau, tau / 5.0, 1e-12);
  EXPECT_EQ(r.aggregate.max_score_deviation, deviation);
}

TEST(ExposureTest, MeanIsExactlyKOverN) {
  const ModelParams p = InitParams(testing::TinyConfig(5));
  const auto qs = RandomQueries(4, 10, 5);
  const ExposureTable t = ExposureReport(ModelScorer(p, InvarianceMode::kFull), qs, 2, 5, 9);
  EXPECT_EQ(t.trials, 20u);
  EXPECT_EQ(t.hits.size(), 10u);
  EXPECT_EQ(std::accumulate(t.hits.begin(), t.hits.end(), std::size_t{0}), 2u * 20u);
  EXPECT_DOUBLE_EQ(t.MeanFraction(), 0.2);
  EXPECT_NEAR(t.BinomialStandardError(), std::sqrt(0.2 * 0.8 / 20.0), 1e-15);
}

TEST(ExposureTest, SlotBiasedScorerConcentratesExposure) {
  const auto qs = RandomQueries(3, 5, 6);
  // Scores the occupant of slot 0 highest regardless of identity.
  const Scorer first_slot = [](const LabeledQuery& q, std::span<const int> order) {
    ScoredList s;
    s.scores.assign(q.query.candidates.size(), 0.0);
    s.scores[static_cast<std::size_t>(order[0])] = 1.0;
    s.ranking = Rank(s.scores);
    return s;
  };
  const ExposureTable t = ExposureReport(first_slot, qs, 1, 4, 1);
  EXPECT_EQ(t.Fraction(0), 1.0);
  for (std::size_t s = 1; s < 5; ++s) EXPECT_EQ(t.Fraction(s), 0.0);
}

TEST(ExposureTest, InvalidKIsContractError) {
  const auto qs = RandomQueries(1, 4, 7);
  EXPECT_THROW(ExposureReport(FixedScorer({0, 0, 0, 0}), qs, 0, 2, 1), ContractError);
  EXPECT_THROW(ExposureReport(FixedScorer({0, 0, 0, 0}), qs, 5, 2, 1), ContractError);
}

TEST(ExposureCsvTest, OneRowPerSlot) {
  ExposureTable t;
  t.list_size = 3;
  t.k = 1;
  t.hits = {2, 1, 1};
  t.trials = 4;
  EXPECT_EQ(ExposureCsv(t), "slot,exposure,hits,trials\n1,0.5,2,4\n2,0.25,1,4\n3,0.25,1,4\n");
}

TEST(BootstrapTest, AggregationImprovesStandardStability) {
  const ModelParams p = InitParams(testing::TinyConfig(8));
  const auto qs = RandomQueries(4, 6, 8);
  const auto r = BootstrapRobustness(ModelScorer(p, InvarianceMode::kStandard), qs, 8, 2, 5);
  EXPECT_GT(r.aggregate_tau, r.single_pass_tau);
  const auto again = BootstrapRobustness(ModelScorer(p, InvarianceMode::kStandard), qs, 8, 2, 5);
  EXPECT_EQ(r.aggregate_tau, again.aggregate_tau);
  EXPECT_EQ(r.single_pass_tau, again.single_pass_tau);
}

TEST(BootstrapTest, OrderBlindScorerGivesUnitTau) {
  const auto qs = RandomQueries(2, 4, 9);
  const auto r = BootstrapRobustness(FixedScorer({0.4, 0.1, 0.3, 0.2}), qs, 3, 2, 1);
  EXPECT_EQ(r.aggregate_tau, 1.0);
  EXPECT_EQ(r.single_pass_tau, 1.0);
  EXPECT_THROW(BootstrapRobustness(FixedScorer({0, 0, 0, 0}), qs, 3, 1, 1), ContractError);
}

TEST(RobustnessCsvTest, ValuesRoundTrip) {
  RobustnessReport r;
  r.label = "full";
  r.aggregate.tau = 1.0 / 3.0;
  r.aggregate.ndcg10 = 0.1 + 0.2;
  r.aggregate.max_score_deviation = 1e-17;
  const RobustnessReport reports[] = {r};
  std::istringstream in(RobustnessCsv(reports));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "label,metric,value");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    EXPECT_EQ(line.substr(0, c1), "full");
    const std::string metric = line.substr(c1 + 1, c2 - c1 - 1);
    const double v = std::stod(line.substr(c2 + 1));
    if (metric == "tau") EXPECT_EQ(v, r.aggregate.tau);
    if (metric == "ndcg@10") EXPECT_EQ(v, r.aggregate.ndcg10);
    if (metric == "max_score_deviation") EXPECT_EQ(v, r.aggregate.max_score_deviation);
  }
  EXPECT_EQ(rows, 8);
}

TEST(RobustnessCsvTest, PerQueryHeader) {
  RobustnessReport r;
  r.per_query.resize(2);
  r.per_query[1].query_id = 9;
  const std::string csv = RobustnessPerQueryCsv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "query_id,tau,rho,t@k,hr@5,hr@10,ndcg@5,ndcg@10,max_score_deviation");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(RandomRankingNdcgTest, MatchesExhaustiveAverage) {
  const std::vector<double> labels = {1, 0, 0, 1, 0};
  Permutation p = IdentityPermutation(5);
  double total = 0.0;
  int count = 0;
  do {
    total += NdcgOfRanking(p, labels, 3);
    ++count;
  } while (std::next_permutation(p.begin(), p.end()));
  EXPECT_NEAR(RandomRankingExpectedNdcg(labels, 3), total / count, 1e-12);
  EXPECT_EQ(RandomRankingExpectedNdcg(std::vector<double>{0, 0}, 2), 0.0);
}

}  // namespace
}  // namespace invarirank
