#pragma once

// Small pre-norm decoder-only transformer driven by explicit token ids,
// per-token position ids and an arbitrary attention mask. Position
// information enters only through rotary embeddings of queries and keys.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invarirank/numerics/attention_mask.hpp"
#include "invarirank/numerics/tensor.hpp"

namespace invarirank {

struct ModelConfig {
  int vocab_size = 1200;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 256;
  double rope_base = 10000.0;
  int max_seq_len = 512;
  numerics::DType dtype = numerics::DType::kFloat64;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  /// Throws ConfigError naming the offending field.
  void Validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  numerics::Shape shape;
  std::vector<double> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Parameters in a fixed canonical order:
///   tok_embedding, then per layer l
///   layers.l.{attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down},
///   then final_norm, lm_head.
/// Projection matrices are stored [in x out].
struct ModelParams {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  std::size_t num_values() const;
  const NamedTensor& at(const std::string& name) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr std::size_t kTensorsPerLayer = 9;

/// Deterministic from config.seed. Matrices are drawn from a normal with
/// standard deviation 1/sqrt(fan_in) truncated at four deviations;
/// normalization scales are 1.
ModelParams InitParams(const ModelConfig& config);

/// Throws ConfigError when names, shapes or values disagree with the config.
void ValidateParams(const ModelParams& params);

/// Parameters bound into one graph as leaves (or constants in a no-grad graph).
struct BoundModel {
  const ModelParams* params = nullptr;
  std::vector<numerics::Tensor> tensors;
};

BoundModel Bind(numerics::Graph& graph, const ModelParams& params);

/// Rotates coordinate pair (2j, 2j+1) of token t by positions[t] * base^(-2j/head_dim).
/// x is [heads x seq x head_dim].
numerics::Tensor RopeRotate(const numerics::Tensor& x, std::span<const int> positions,
                            double base);

/// Final normalized hidden states [seq x d_model].
numerics::Tensor ForwardHidden(const BoundModel& model, std::span<const int> tokens,
                               std::span<const int> positions, const AttentionMask& mask);

/// Output projection of hidden rows -> [rows x vocab].
numerics::Tensor LmHead(const BoundModel& model, const numerics::Tensor& hidden);

/// Next-token logits [seq x vocab]. Throws ContractError on length mismatch
/// and DegenerateRowError for a fully masked query row.
numerics::Tensor Forward(const BoundModel& model, std::span<const int> tokens,
                         std::span<const int> positions, const AttentionMask& mask);

/// Convenience forward without gradient recording; row-major [seq x vocab].
std::vector<double> ComputeLogits(const ModelParams& params, std::span<const int> tokens,
                                  std::span<const int> positions, const AttentionMask& mask);

}  // namespace invarirank
