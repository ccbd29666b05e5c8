#include "invarirank/model.hpp"

#include <array>
#include <cmath>
#include <random>

#include "invarirank/errors.hpp"
#include "invarirank/numerics/ops.hpp"

namespace invarirank {

using numerics::Graph;
using numerics::Shape;
using numerics::Tensor;

void ModelConfig::Validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(vocab_size > 0, "vocab_size must be positive");
  require(d_model > 0, "d_model must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(n_layers > 0, "n_layers must be positive");
  require(d_ff > 0, "d_ff must be positive");
  require(max_seq_len > 0, "max_seq_len must be positive");
  require(rope_base > 1.0, "rope_base must exceed 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(head_dim() % 2 == 0, "head dimension must be even for rotary embeddings");
  require(dtype == numerics::DType::kFloat64, "only float64 is supported");
}

std::size_t ModelParams::num_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

const NamedTensor& ModelParams::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ContractError("no parameter named " + name);
}

namespace {

struct Spec {
  std::string name;
  Shape shape;
  bool is_scale;
};

std::vector<Spec> ParamSpecs(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  std::vector<Spec> specs;
  specs.push_back({"tok_embedding", {v, d}, false});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    specs.push_back({p + "attn_norm", {d}, true});
    specs.push_back({p + "wq", {d, d}, false});
    specs.push_back({p + "wk", {d, d}, false});
    specs.push_back({p + "wv", {d, d}, false});
    specs.push_back({p + "wo", {d, d}, false});
    specs.push_back({p + "ffn_norm", {d}, true});
    specs.push_back({p + "w_gate", {d, f}, false});
    specs.push_back({p + "w_up", {d, f}, false});
    specs.push_back({p + "w_down", {f, d}, false});
  }
  specs.push_back({"final_norm", {d}, true});
  specs.push_back({"lm_head", {d, v}, false});
  return specs;
}

}  // namespace

ModelParams InitParams(const ModelConfig& config) {
  config.Validate();
  ModelParams params;
  params.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& spec : ParamSpecs(config)) {
    NamedTensor t{spec.name, spec.shape, {}};
    const std::size_t n = numerics::NumElements(spec.shape);
    if (spec.is_scale) {
      t.values.assign(n, 1.0);
    } else {
      // Embedding rows are d_model wide; every other matrix is [in x out].
      const double fan_in = spec.name == "tok_embedding" ? static_cast<double>(spec.shape[1])
                                                         : static_cast<double>(spec.shape[0]);
      const double std_dev = 1.0 / std::sqrt(fan_in);
      t.values.resize(n);
      for (double& w : t.values) {
        double z = normal(rng);
        while (std::abs(z) > 4.0) z = normal(rng);
        w = z * std_dev;
      }
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

void ValidateParams(const ModelParams& params) {
  params.config.Validate();
  const auto specs = ParamSpecs(params.config);
  if (specs.size() != params.tensors.size()) {
    throw ConfigError("parameter count does not match the model config");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& t = params.tensors[i];
    if (t.name != specs[i].name || t.shape != specs[i].shape ||
        t.values.size() != numerics::NumElements(t.shape)) {
      throw ConfigError("parameter " + specs[i].name + " is missing or misshapen");
    }
    for (double v : t.values) {
      if (!std::isfinite(v)) throw NumericError("parameter " + t.name + " is not finite");
    }
  }
}

BoundModel Bind(Graph& graph, const ModelParams& params) {
  BoundModel bound;
  bound.params = &params;
  bound.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    bound.tensors.push_back(graph.mode() == numerics::GradMode::kRecord
                                ? graph.Leaf(t.shape, t.values)
                                : graph.Constant(t.shape, t.values));
  }
  return bound;
}

Tensor RopeRotate(const Tensor& x, std::span<const int> positions, double base) {
  if (x.rank() != 3) throw DimensionError("rope: expected [heads x seq x head_dim]");
  const std::size_t heads = x.extent(0), seq = x.extent(1), hd = x.extent(2);
  if (hd % 2 != 0) throw ConfigError("rope: head dimension must be even");
  if (positions.size() != seq) throw ContractError("rope: one position per token required");
  const std::size_t pairs = hd / 2;
  std::vector<double> cos_table(seq * pairs), sin_table(seq * pairs);
  for (std::size_t t = 0; t < seq; ++t) {
    if (positions[t] < 0) throw ContractError("rope: negative position");
    for (std::size_t j = 0; j < pairs; ++j) {
      const double theta =
          std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(hd));
      const double angle = static_cast<double>(positions[t]) * theta;
      cos_table[t * pairs + j] = std::cos(angle);
      sin_table[t * pairs + j] = std::sin(angle);
    }
  }
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < seq; ++t) {
      const std::size_t row = (h * seq + t) * hd;
      for (std::size_t j = 0; j < pairs; ++j) {
        const double c = cos_table[t * pairs + j], s = sin_table[t * pairs + j];
        const double a = in[row + 2 * j], b = in[row + 2 * j + 1];
        out[row + 2 * j] = a * c - b * s;
        out[row + 2 * j + 1] = a * s + b * c;
      }
    }
  }
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = g.num_nodes();
  return g.Emit("rope", {x}, x.shape(), std::move(out),
                [&g, xi, yi, heads, seq, hd, pairs, cos_table = std::move(cos_table),
                 sin_table = std::move(sin_table)] {
                  const auto& dy = g.node(yi).grad;
                  auto& dx = g.GradOf(xi);
                  for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t t = 0; t < seq; ++t) {
                      const std::size_t row = (h * seq + t) * hd;
                      for (std::size_t j = 0; j < pairs; ++j) {
                        const double c = cos_table[t * pairs + j], s = sin_table[t * pairs + j];
                        const double ga = dy[row + 2 * j], gb = dy[row + 2 * j + 1];
                        dx[row + 2 * j] += ga * c + gb * s;
                        dx[row + 2 * j + 1] += -ga * s + gb * c;
                      }
                    }
                  }
                });
}

namespace {

constexpr std::array<std::size_t, 3> kSeqHeadSwap = {1, 0, 2};
constexpr std::array<std::size_t, 3> kLastTwoSwap = {0, 2, 1};

// [seq x d] -> [heads x seq x head_dim]
Tensor SplitHeads(const Tensor& x, std::size_t heads) {
  const std::size_t seq = x.extent(0), hd = x.extent(1) / heads;
  return numerics::Transpose(numerics::Reshape(x, {seq, heads, hd}), kSeqHeadSwap);
}

Tensor MergeHeads(const Tensor& x) {
  const std::size_t heads = x.extent(0), seq = x.extent(1), hd = x.extent(2);
  return numerics::Reshape(numerics::Transpose(x, kSeqHeadSwap), {seq, heads * hd});
}

}  // namespace

Tensor ForwardHidden(const BoundModel& model, std::span<const int> tokens,
                     std::span<const int> positions, const AttentionMask& mask) {
  const ModelConfig& c = model.params->config;
  if (tokens.size() != positions.size() || tokens.size() != mask.side()) {
    throw ContractError("forward: tokens, positions and mask disagree in length");
  }
  if (tokens.empty()) throw ContractError("forward: empty sequence");
  if (tokens.size() > static_cast<std::size_t>(c.max_seq_len)) {
    throw ContractError("forward: sequence longer than max_seq_len");
  }
  for (std::size_t t = 0; t < mask.side(); ++t) {
    if (!mask.RowHasPermittedKey(t)) {
      throw DegenerateRowError("forward: query row " + std::to_string(t) +
                               " has no permitted key");
    }
  }
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(c.head_dim()));
  const auto& p = model.tensors;

  Tensor x = numerics::GatherRows(p[0], tokens);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::size_t base = 1 + static_cast<std::size_t>(l) * kTensorsPerLayer;
    const Tensor& attn_norm = p[base + 0];
    const Tensor& wq = p[base + 1];
    const Tensor& wk = p[base + 2];
    const Tensor& wv = p[base + 3];
    const Tensor& wo = p[base + 4];
    const Tensor& ffn_norm = p[base + 5];
    const Tensor& w_gate = p[base + 6];
    const Tensor& w_up = p[base + 7];
    const Tensor& w_down = p[base + 8];

    Tensor h = numerics::RmsNorm(x, attn_norm);
    Tensor q = RopeRotate(SplitHeads(numerics::MatMul(h, wq), heads), positions, c.rope_base);
    Tensor k = RopeRotate(SplitHeads(numerics::MatMul(h, wk), heads), positions, c.rope_base);
    Tensor v = SplitHeads(numerics::MatMul(h, wv), heads);
    Tensor scores = numerics::MulScalar(
        numerics::BatchedMatMul(q, numerics::Transpose(k, kLastTwoSwap)), attn_scale);
    Tensor weights = numerics::MaskedSoftmax(scores, mask);
    Tensor attended = MergeHeads(numerics::BatchedMatMul(weights, v));
    x = numerics::Add(x, numerics::MatMul(attended, wo));

    Tensor h2 = numerics::RmsNorm(x, ffn_norm);
    Tensor gated = numerics::Mul(numerics::Silu(numerics::MatMul(h2, w_gate)),
                                 numerics::MatMul(h2, w_up));
    x = numerics::Add(x, numerics::MatMul(gated, w_down));
  }
  const std::size_t final_norm = 1 + static_cast<std::size_t>(c.n_layers) * kTensorsPerLayer;
  return numerics::RmsNorm(x, p[final_norm]);
}

Tensor LmHead(const BoundModel& model, const Tensor& hidden) {
  return numerics::MatMul(hidden, model.tensors.back());
}

Tensor Forward(const BoundModel& model, std::span<const int> tokens,
               std::span<const int> positions, const AttentionMask& mask) {
  return LmHead(model, ForwardHidden(model, tokens, positions, mask));
}

std::vector<double> ComputeLogits(const ModelParams& params, std::span<const int> tokens,
                                  std::span<const int> positions, const AttentionMask& mask) {
  Graph graph(numerics::GradMode::kNoGrad);
  BoundModel model = Bind(graph, params);
  Tensor logits = Forward(model, tokens, positions, mask);
  return {logits.data().begin(), logits.data().end()};
}

}  // namespace invarirank
