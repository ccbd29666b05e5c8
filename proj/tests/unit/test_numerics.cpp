#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "invarirank/errors.hpp"
#include "invarirank/numerics/grad_check.hpp"
#include "invarirank/numerics/ops.hpp"

namespace invarirank::numerics {
namespace {

std::vector<double> RandomValues(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                 double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

using Builder = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

// Max relative error of the analytic gradient of build(...) w.r.t. every input.
double OpGradError(const Builder& build, const std::vector<Shape>& shapes,
                   std::vector<std::vector<double>> values) {
  Graph g;
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < shapes.size(); ++i) leaves.push_back(g.Leaf(shapes[i], values[i]));
  Tensor loss = build(g, leaves);
  g.Backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    std::vector<double> analytic(leaves[i].grad().begin(), leaves[i].grad().end());
    auto objective = [&] {
      Graph h(GradMode::kNoGrad);
      std::vector<Tensor> inputs;
      for (std::size_t j = 0; j < shapes.size(); ++j) inputs.push_back(h.Constant(shapes[j], values[j]));
      return build(h, inputs).item();
    };
    auto r = GradCheck(values[i], analytic, objective, {.epsilon = 1e-6, .samples = 1000});
    worst = std::max(worst, r.max_relative_error);
  }
  return worst;
}

// Weighted sum so every output element carries a distinct upstream gradient.
Tensor WeightedSum(Graph& g, const Tensor& x) {
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return Sum(Mul(x, g.Constant(x.shape(), w)));
}

TEST(MatMulTest, IdentityLeavesMatrixUnchanged) {
  Graph g;
  Tensor eye = g.Constant({2, 2}, {1, 0, 0, 1});
  Tensor m = g.Constant({2, 2}, {1, 2, 3, 4});
  Tensor out = MatMul(eye, m);
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()),
            (std::vector<double>{1, 2, 3, 4}));
}

TEST(MatMulTest, RowTimesColumn) {
  Graph g;
  Tensor out = MatMul(g.Constant({1, 2}, {1, 2}), g.Constant({2, 1}, {3, 4}));
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.item(), 11.0);
}

TEST(MatMulTest, InnerExtentMismatchThrows) {
  Graph g;
  EXPECT_THROW(MatMul(g.Constant({2, 3}, RandomValues(6, 1)), g.Constant({2, 2}, RandomValues(4, 2))),
               DimensionError);
}

TEST(MatMulTest, GradientOfSumMatchesFiniteDifferences) {
  const double err = OpGradError(
      [](Graph&, const std::vector<Tensor>& in) { return Sum(MatMul(in[0], in[1])); },
      {{3, 4}, {4, 2}}, {RandomValues(12, 3), RandomValues(8, 4)});
  EXPECT_LT(err, 1e-6);
}

TEST(MaskedSoftmaxTest, UniformLogitsGiveUniformWeights) {
  Graph g;
  AttentionMask mask(3, true);
  Tensor w = MaskedSoftmax(g.Constant({1, 3, 3}, std::vector<double>(9, 0.0)), mask);
  for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(MaskedSoftmaxTest, SinglePermittedKeyTakesAllWeight) {
  Graph g;
  AttentionMask mask(3, false);
  for (std::size_t t = 0; t < 3; ++t) mask.set(t, 0, true);
  Tensor w = MaskedSoftmax(g.Constant({1, 3, 3}, {5, 1, 1, 5, 1, 1, 5, 1, 1}), mask);
  EXPECT_EQ(w.data()[0], 1.0);
  EXPECT_EQ(w.data()[1], 0.0);
  EXPECT_EQ(w.data()[2], 0.0);
}

TEST(MaskedSoftmaxTest, TwoKeyValues) {
  Graph g;
  Tensor w = MaskedSoftmax(g.Constant({1, 2, 2}, {1, 2, 1, 2}), AttentionMask(2, true));
  EXPECT_NEAR(w.data()[0], 0.26894, 1e-5);
  EXPECT_NEAR(w.data()[1], 0.73106, 1e-5);
}

TEST(MaskedSoftmaxTest, FullyMaskedRowThrows) {
  Graph g;
  AttentionMask mask(2, true);
  mask.set(1, 0, false);
  mask.set(1, 1, false);
  EXPECT_THROW(MaskedSoftmax(g.Constant({1, 2, 2}, {0, 0, 0, 0}), mask), DegenerateRowError);
}

TEST(MaskedSoftmaxTest, RowsSumToOneAndMaskedEntriesAreZero) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  const std::size_t heads = 3, side = 9;
  AttentionMask mask(side, false);
  for (std::size_t t = 0; t < side; ++t) {
    mask.set(t, t, true);
    for (std::size_t u = 0; u < side; ++u) {
      if (coin(rng)) mask.set(t, u, true);
    }
  }
  Graph g;
  // Large logits on forbidden lanes must not leak.
  auto logits = RandomValues(heads * side * side, 12, -30.0, 30.0);
  Tensor w = MaskedSoftmax(g.Constant({heads, side, side}, logits), mask);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < side; ++t) {
      double total = 0.0;
      for (std::size_t u = 0; u < side; ++u) {
        const double v = w.data()[(h * side + t) * side + u];
        if (!mask(t, u)) EXPECT_EQ(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(MaskedSoftmaxTest, GradientMatchesFiniteDifferences) {
  AttentionMask mask(4, true);
  mask.set(0, 3, false);
  mask.set(1, 2, false);
  mask.set(2, 0, false);
  const double err = OpGradError(
      [&mask](Graph& g, const std::vector<Tensor>& in) {
        return WeightedSum(g, MaskedSoftmax(in[0], mask));
      },
      {{2, 4, 4}}, {RandomValues(32, 5, -2.0, 2.0)});
  EXPECT_LT(err, 1e-6);
}

TEST(BackwardTest, SumGivesOnesOfAnyShape) {
  Graph g;
  Tensor x = g.Leaf({2, 3, 2}, RandomValues(12, 6));
  g.Backward(Sum(x));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(BackwardTest, SquareAtThree) {
  Graph g;
  Tensor x = g.Leaf({1}, {3.0});
  g.Backward(Mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(BackwardTest, RepeatedCallsAccumulateAndZeroGradResets) {
  Graph g;
  Tensor x = g.Leaf({1}, {3.0});
  Tensor y = Mul(x, x);
  g.Backward(y);
  g.Backward(y);
  EXPECT_EQ(x.grad()[0], 12.0);
  g.ZeroGrad();
  g.Backward(y);
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(BackwardTest, NonScalarLossThrows) {
  Graph g;
  Tensor x = g.Leaf({2}, {1.0, 2.0});
  EXPECT_THROW(g.Backward(Mul(x, x)), ContractError);
}

TEST(BackwardTest, RecordsAreTopologicallyOrdered) {
  Graph g;
  Tensor a = g.Leaf({2, 2}, RandomValues(4, 7));
  Tensor b = g.Leaf({2, 2}, RandomValues(4, 8));
  Tensor c = Add(MatMul(a, b), Mul(a, b));
  Sum(Exp(c));
  std::vector<bool> produced(g.num_nodes(), false);
  for (std::size_t id = 0; id < g.num_nodes(); ++id) produced[id] = g.node(id).producer < 0;
  for (const auto& r : g.records()) {
    for (std::size_t in : r.inputs) EXPECT_TRUE(produced[in]) << r.kind;
    produced[r.output] = true;
  }
}

TEST(OpsTest, NonFiniteResultThrows) {
  Graph g;
  Tensor x = g.Constant({1}, {800.0});
  EXPECT_THROW(Exp(x), NumericError);
  EXPECT_THROW(Log(g.Constant({1}, {-1.0})), NumericError);
}

TEST(OpsTest, ElementwiseShapeMismatchThrows) {
  Graph g;
  EXPECT_THROW(Add(g.Constant({2}, {1, 2}), g.Constant({3}, {1, 2, 3})), DimensionError);
}

TEST(OpsTest, ForwardIsBitwiseDeterministic) {
  auto run = [] {
    Graph g(GradMode::kNoGrad);
    Tensor a = g.Constant({5, 7}, RandomValues(35, 9));
    Tensor s = g.Constant({7}, RandomValues(7, 10, 0.5, 1.5));
    Tensor out = LogSoftmax(RmsNorm(MatMul(a, g.Constant({7, 7}, RandomValues(49, 11))), s));
    return std::vector<double>(out.data().begin(), out.data().end());
  };
  EXPECT_EQ(run(), run());
}

struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  Builder build;
  double lo = -1.0;
  double hi = 1.0;
};

class OpGradientTest : public ::testing::TestWithParam<GradCase> {};

TEST_P(OpGradientTest, MatchesCentralDifferences) {
  const auto& c = GetParam();
  std::vector<std::vector<double>> values;
  std::uint64_t seed = 100;
  for (const auto& s : c.shapes) values.push_back(RandomValues(NumElements(s), seed++, c.lo, c.hi));
  EXPECT_LT(OpGradError(c.build, c.shapes, values), 1e-6) << c.name;
}

constexpr std::array<std::size_t, 3> kSwap01 = {1, 0, 2};
constexpr std::array<std::size_t, 3> kSwap12 = {0, 2, 1};
const int kRows[] = {2, 0, 2, 1};
const std::size_t kFlat[] = {5, 0, 3, 3};
const int kCols[] = {1, 3, 0};
const std::size_t kRuns[] = {0, 2, 3, 6};

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradientTest,
    ::testing::Values(
        GradCase{"add", {{2, 3}, {2, 3}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Add(in[0], in[1])); }},
        GradCase{"sub", {{2, 3}, {2, 3}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Sub(in[0], in[1])); }},
        GradCase{"mul", {{2, 3}, {2, 3}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Mul(in[0], in[1])); }},
        GradCase{"scalar", {{4}},
                 [](Graph& g, const std::vector<Tensor>& in) {
                   return WeightedSum(g, AddScalar(MulScalar(in[0], -2.5), 0.75));
                 }},
        GradCase{"exp", {{5}}, [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Exp(in[0])); }},
        GradCase{"log", {{5}}, [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Log(in[0])); },
                 0.5, 2.0},
        GradCase{"silu", {{6}}, [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Silu(in[0])); },
                 -3.0, 3.0},
        GradCase{"softplus", {{6}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Softplus(in[0])); }, -5.0, 5.0},
        GradCase{"batched_matmul", {{2, 3, 4}, {2, 4, 2}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, BatchedMatMul(in[0], in[1])); }},
        GradCase{"reshape", {{2, 6}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Reshape(in[0], {3, 4})); }},
        GradCase{"transpose01", {{2, 3, 4}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Transpose(in[0], kSwap01)); }},
        GradCase{"transpose12", {{2, 3, 4}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Transpose(in[0], kSwap12)); }},
        GradCase{"gather_rows", {{3, 4}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, GatherRows(in[0], kRows)); }},
        GradCase{"take", {{2, 3}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Take(in[0], kFlat)); }},
        GradCase{"pick", {{3, 4}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, Pick(in[0], kCols)); }},
        GradCase{"rms_norm", {{3, 5}, {5}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, RmsNorm(in[0], in[1])); }},
        GradCase{"log_softmax", {{3, 5}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, LogSoftmax(in[0])); }},
        GradCase{"mean", {{3, 5}}, [](Graph&, const std::vector<Tensor>& in) { return Mean(in[0]); }},
        GradCase{"max", {{7}}, [](Graph&, const std::vector<Tensor>& in) { return Max(in[0]); }},
        GradCase{"segment_mean", {{6}},
                 [](Graph& g, const std::vector<Tensor>& in) { return WeightedSum(g, SegmentMean(in[0], kRuns)); }}),
    [](const ::testing::TestParamInfo<GradCase>& info) { return std::string(info.param.name); });

TEST(GradCheckTest, SquareFunction) {
  std::vector<double> x = {3.0};
  const std::vector<double> analytic = {6.0};
  auto r = GradCheck(x, analytic, [&x] { return x[0] * x[0]; }, {.epsilon = 1e-4});
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(x[0], 3.0);
}

TEST(GradCheckTest, ConstantFunctionHasZeroError) {
  std::vector<double> x = {1.0, -2.0, 0.5};
  const std::vector<double> analytic(3, 0.0);
  auto r = GradCheck(x, analytic, [] { return 4.0; });
  EXPECT_EQ(r.max_relative_error, 0.0);
  EXPECT_EQ(r.checked, 3u);
}

TEST(GradCheckTest, WrongGradientIsDetected) {
  std::vector<double> x = {2.0};
  const std::vector<double> analytic = {1.0};
  auto r = GradCheck(x, analytic, [&x] { return x[0] * x[0]; });
  EXPECT_GT(r.max_relative_error, 0.5);
}

TEST(GradCheckTest, NonFiniteObjectiveThrows) {
  std::vector<double> x = {1.0};
  const std::vector<double> analytic = {0.0};
  EXPECT_THROW(GradCheck(x, analytic, [] { return std::numeric_limits<double>::quiet_NaN(); }),
               NumericError);
}

}  // namespace
}  // namespace invarirank::numerics
