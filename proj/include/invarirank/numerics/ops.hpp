#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "invarirank/numerics/attention_mask.hpp"
#include "invarirank/numerics/tensor.hpp"

namespace invarirank::numerics {

// Elementwise, identical shapes.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);

Tensor AddScalar(const Tensor& x, double c);
Tensor MulScalar(const Tensor& x, double c);
Tensor Exp(const Tensor& x);
Tensor Log(const Tensor& x);
Tensor Silu(const Tensor& x);
/// log(1 + exp(x)), evaluated without overflow.
Tensor Softplus(const Tensor& x);

/// [m x k] . [k x n] -> [m x n]
Tensor MatMul(const Tensor& a, const Tensor& b);
/// [b x m x k] . [b x k x n] -> [b x m x n]
Tensor BatchedMatMul(const Tensor& a, const Tensor& b);

Tensor Reshape(const Tensor& x, Shape shape);
/// Reorders axes: output axis i is input axis `axes[i]`. Rank <= 4.
Tensor Transpose(const Tensor& x, std::span<const std::size_t> axes);

/// Rows of a 2-D `table` selected by `rows` -> [rows.size() x cols].
/// Serves both embedding lookup and row selection.
Tensor GatherRows(const Tensor& table, std::span<const int> rows);
/// Flat-index gather over any tensor -> [indices.size()].
Tensor Take(const Tensor& x, std::span<const std::size_t> indices);
/// x[i, cols[i]] for a 2-D tensor -> [rows].
Tensor Pick(const Tensor& x, std::span<const int> cols);

/// Row-wise x / sqrt(mean(x^2) + eps) * scale, for x [n x d] and scale [d].
Tensor RmsNorm(const Tensor& x, const Tensor& scale, double eps = 1e-6);

/// Log-softmax over the last axis of a 2-D tensor.
Tensor LogSoftmax(const Tensor& x);

/// Softmax over the last axis of [h x q x k] restricted to keys the mask
/// permits. Forbidden keys get exactly 0. Throws DegenerateRowError when a
/// query row has no permitted key.
Tensor MaskedSoftmax(const Tensor& logits, const AttentionMask& mask);

Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);
/// Maximum element; the gradient flows to the first maximal element.
Tensor Max(const Tensor& x);

/// Means of consecutive runs of a 1-D tensor. Run i spans
/// [offsets[i], offsets[i+1]); every run must be non-empty.
Tensor SegmentMean(const Tensor& x, std::span<const std::size_t> offsets);

}  // namespace invarirank::numerics
