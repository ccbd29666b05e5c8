#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "invarirank/checkpoint.hpp"
#include "invarirank/errors.hpp"
#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/numerics/grad_check.hpp"
#include "invarirank/numerics/ops.hpp"
#include "invarirank/training.hpp"
#include "test_support.hpp"

namespace invarirank {
namespace {

using numerics::Graph;
using numerics::GradMode;
using numerics::Tensor;

std::vector<double> Rotate(const std::vector<double>& x, std::size_t hd, int position,
                           double base = 10000.0) {
  Graph g(GradMode::kNoGrad);
  const int positions[] = {position};
  Tensor out = RopeRotate(g.Constant({1, 1, hd}, x), positions, base);
  return {out.data().begin(), out.data().end()};
}

double Dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(InitParamsTest, SameSeedIsBitwiseIdentical) {
  const auto c = testing::TinyConfig(3);
  EXPECT_EQ(InitParams(c), InitParams(c));
  EXPECT_NE(InitParams(c), InitParams(testing::TinyConfig(4)));
}

TEST(InitParamsTest, NormScalesStartAtOne) {
  const ModelParams p = InitParams(ModelConfig{});
  for (const auto& t : p.tensors) {
    if (t.name.find("norm") == std::string::npos) continue;
    for (double v : t.values) EXPECT_EQ(v, 1.0) << t.name;
  }
}

TEST(InitParamsTest, EmbeddingWithinFourSigmaOfDefaultWidth) {
  const ModelParams p = InitParams(ModelConfig{});
  for (double v : p.at("tok_embedding").values) EXPECT_LE(std::abs(v), 0.5);
}

TEST(InitParamsTest, InvalidConfigThrows) {
  ModelConfig c = testing::TinyConfig();
  c.n_heads = 3;
  EXPECT_THROW(InitParams(c), ConfigError);
  c = testing::TinyConfig();
  c.d_model = 6;
  c.n_heads = 2;  // head_dim 3 is odd
  EXPECT_THROW(InitParams(c), ConfigError);
  c = testing::TinyConfig();
  c.vocab_size = 0;
  EXPECT_THROW(InitParams(c), ConfigError);
}

TEST(RopeTest, PositionZeroIsIdentity) {
  const std::vector<double> x = {0.3, -1.2, 0.7, 2.0};
  EXPECT_EQ(Rotate(x, 4, 0), x);
}

TEST(RopeTest, UnitVectorAtPositionOne) {
  const auto out = Rotate({1.0, 0.0}, 2, 1, 123.0);
  EXPECT_NEAR(out[0], 0.54030, 1e-5);
  EXPECT_NEAR(out[1], 0.84147, 1e-5);
}

TEST(RopeTest, OddHeadDimThrows) {
  Graph g(GradMode::kNoGrad);
  const int positions[] = {1};
  EXPECT_THROW(RopeRotate(g.Constant({1, 1, 3}, {1, 2, 3}), positions, 10000.0), ConfigError);
}

TEST(RopeTest, PreservesPairNorms) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(16);
    for (double& v : x) v = n(rng);
    const auto y = Rotate(x, 16, trial * 37 + 1);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_NEAR(std::hypot(y[2 * j], y[2 * j + 1]), std::hypot(x[2 * j], x[2 * j + 1]), 1e-12);
    }
  }
}

TEST(RopeTest, DotProductDependsOnlyOnRelativeOffset) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> pos(0, 300);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(16), k(16);
    for (double& v : q) v = n(rng);
    for (double& v : k) v = n(rng);
    const int m = pos(rng), p = pos(rng), s = pos(rng);
    EXPECT_NEAR(Dot(Rotate(q, 16, m + s), Rotate(k, 16, p + s)), Dot(Rotate(q, 16, m), Rotate(k, 16, p)),
                1e-10);
  }
}

TEST(RopeTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(2 * 3 * 4);
  for (double& v : x) v = n(rng);
  const int positions[] = {1, 5, 9};
  const std::vector<double> w = {0.1, -0.4, 0.9, 0.2, 0.5, -0.3, 0.8, 0.7, -0.6, 0.3, 0.4, 0.1,
                                 0.2, 0.6, -0.2, 0.9, -0.8, 0.4, 0.5, 0.3, 0.2, -0.1, 0.6, 0.7};
  auto loss = [&](Graph& g, const Tensor& in) {
    return numerics::Sum(numerics::Mul(RopeRotate(in, positions, 10000.0), g.Constant({2, 3, 4}, w)));
  };
  Graph g;
  Tensor leaf = g.Leaf({2, 3, 4}, x);
  g.Backward(loss(g, leaf));
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  auto r = numerics::GradCheck(x, analytic, [&] {
    Graph h(GradMode::kNoGrad);
    return loss(h, h.Constant({2, 3, 4}, x)).item();
  });
  EXPECT_LT(r.max_relative_error, 1e-7);
}

struct ForwardInputs {
  std::vector<int> tokens;
  std::vector<int> positions;
  AttentionMask mask;
};

ForwardInputs CausalInputs(std::size_t n, int vocab) {
  ForwardInputs in;
  for (std::size_t t = 0; t < n; ++t) {
    in.tokens.push_back(static_cast<int>(t * 7 % static_cast<std::size_t>(vocab)));
    in.positions.push_back(static_cast<int>(t));
  }
  in.mask = CausalMask(n);
  return in;
}

TEST(ForwardTest, IdenticalInputsGiveIdenticalLogits) {
  const ModelParams p = InitParams(testing::TinyConfig());
  const auto in = CausalInputs(12, p.config.vocab_size);
  const auto a = ComputeLogits(p, in.tokens, in.positions, in.mask);
  const auto b = ComputeLogits(p, in.tokens, in.positions, in.mask);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 12u * static_cast<std::size_t>(p.config.vocab_size));
}

TEST(ForwardTest, CausalMaskMakesPrefixLogitsIndependentOfSuffix) {
  const ModelParams p = InitParams(testing::TinyConfig());
  auto in = CausalInputs(10, p.config.vocab_size);
  const auto full = ComputeLogits(p, in.tokens, in.positions, in.mask);
  in.tokens[9] = (in.tokens[9] + 1) % p.config.vocab_size;
  const auto edited = ComputeLogits(p, in.tokens, in.positions, in.mask);
  const std::size_t v = static_cast<std::size_t>(p.config.vocab_size);
  for (std::size_t i = 0; i < 9 * v; ++i) ASSERT_EQ(full[i], edited[i]);
  bool changed = false;
  for (std::size_t i = 9 * v; i < 10 * v; ++i) changed = changed || full[i] != edited[i];
  EXPECT_TRUE(changed);
}

TEST(ForwardTest, LengthMismatchThrows) {
  const ModelParams p = InitParams(testing::TinyConfig());
  auto in = CausalInputs(6, p.config.vocab_size);
  in.positions.pop_back();
  EXPECT_THROW(ComputeLogits(p, in.tokens, in.positions, in.mask), ContractError);
}

TEST(ForwardTest, FullyMaskedRowThrows) {
  const ModelParams p = InitParams(testing::TinyConfig());
  auto in = CausalInputs(6, p.config.vocab_size);
  for (std::size_t u = 0; u < 6; ++u) in.mask.set(3, u, false);
  EXPECT_THROW(ComputeLogits(p, in.tokens, in.positions, in.mask), DegenerateRowError);
}

TEST(ForwardTest, SequenceLongerThanMaxThrows) {
  ModelConfig c = testing::TinyConfig();
  c.max_seq_len = 8;
  const ModelParams p = InitParams(c);
  const auto in = CausalInputs(9, c.vocab_size);
  EXPECT_THROW(ComputeLogits(p, in.tokens, in.positions, in.mask), ContractError);
}

TEST(ForwardTest, SwappingSegmentsKeepsSpanLogitsUnderFullMode) {
  const ModelParams p = InitParams(testing::TinyConfig());
  std::mt19937_64 rng(21);
  const TokenizedQuery q = testing::RandomQuery(rng, p.config.vocab_size, 4, 5);
  const PromptLayout a = LayoutFor(q, IdentityPermutation(4), 128);
  const int swap[] = {2, 1, 0, 3};
  const PromptLayout b = PermuteLayout(a, swap);
  auto logits = [&](const PromptLayout& l) {
    return ComputeLogits(p, l.tokens, AssignPositions(l, InvarianceMode::kFull),
                         BuildAttentionMask(l, InvarianceMode::kFull));
  };
  const auto la = logits(a), lb = logits(b);
  const std::size_t v = static_cast<std::size_t>(p.config.vocab_size);
  for (int id = 0; id < 4; ++id) {
    const TokenRange ra = a.candidate_ranges[a.SlotOf(id)], rb = b.candidate_ranges[b.SlotOf(id)];
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t j = 0; j < ra.size(); ++j) {
      for (std::size_t w = 0; w < v; ++w) {
        EXPECT_NEAR(la[(ra.begin + j) * v + w], lb[(rb.begin + j) * v + w], 1e-10);
      }
    }
  }
}

TEST(ModelGradientTest, EndToEndLossMatchesFiniteDifferences) {
  ModelParams p = InitParams(testing::TinyConfig(12));
  std::mt19937_64 rng(13);
  const LabeledQuery q = testing::RandomLabeledQuery(rng, p.config.vocab_size, 5, 4);
  const Permutation order = {3, 0, 4, 1, 2};
  // Weights are frozen at the starting ranking; every probe keeps it.
  const auto grad = ComputeExampleGradient(p, q, order, InvarianceMode::kFull, 1.0);
  ASSERT_TRUE(grad.has_value());
  const auto frozen = BuildLambdaPairs(ScoreCandidates(p, q.query, InvarianceMode::kFull, order).scores, q.labels);

  std::vector<double> flat, analytic;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    flat.insert(flat.end(), p.tensors[t].values.begin(), p.tensors[t].values.end());
    analytic.insert(analytic.end(), grad->grads[t].begin(), grad->grads[t].end());
  }
  auto objective = [&] {
    ModelParams probe = p;
    std::size_t offset = 0;
    for (auto& t : probe.tensors) {
      std::copy(flat.begin() + static_cast<long>(offset),
                flat.begin() + static_cast<long>(offset + t.values.size()), t.values.begin());
      offset += t.values.size();
    }
    const auto s = ScoreCandidates(probe, q.query, InvarianceMode::kFull, order).scores;
    double loss = 0.0;
    for (std::size_t k = 0; k < frozen.winners.size(); ++k) {
      const double margin = s[frozen.winners[k]] - s[frozen.losers[k]];
      loss += frozen.weights[k] * std::log1p(std::exp(-margin));
    }
    return loss / static_cast<double>(frozen.winners.size());
  };
  const auto r = numerics::GradCheck(flat, analytic, objective, {.epsilon = 1e-5, .samples = 150, .seed = 4});
  EXPECT_GE(r.checked, 100u);
  EXPECT_LT(r.max_relative_error, 1e-4) << "worst coordinate " << r.worst_coordinate << " analytic "
                                        << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(CheckpointTest, RoundTripsParameters) {
  const ModelParams p = InitParams(testing::TinyConfig());
  const auto path = std::filesystem::temp_directory_path() / "invarirank_model_roundtrip.bin";
  WriteCheckpoint(path, CheckpointFromParams(p, 17));
  const Checkpoint ck = ReadCheckpoint(path);
  EXPECT_EQ(ck.step, 17);
  EXPECT_EQ(ParamsFromCheckpoint(ck), p);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, ForeignFileIsVersionError) {
  const auto path = std::filesystem::temp_directory_path() / "invarirank_not_a_checkpoint.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT and some more bytes";
  }
  EXPECT_THROW(ReadCheckpoint(path), VersionError);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, TruncatedFileIsParseError) {
  const ModelParams p = InitParams(testing::TinyConfig());
  const auto path = std::filesystem::temp_directory_path() / "invarirank_truncated.bin";
  WriteCheckpoint(path, CheckpointFromParams(p, 0));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 100);
  EXPECT_THROW(ReadCheckpoint(path), ParseError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace invarirank
