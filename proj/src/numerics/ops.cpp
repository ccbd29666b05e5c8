#include "invarirank/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "invarirank/errors.hpp"

namespace invarirank::numerics {
namespace {

void RequireSameShape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + ShapeToString(a.shape()) +
                         " and " + ShapeToString(b.shape()) + " differ");
  }
}

void RequireRank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + ShapeToString(x.shape()));
  }
}

void RequireSameGraph(const char* op, const Tensor& a, const Tensor& b) {
  if (&a.graph() != &b.graph()) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
}

// Emit appends exactly one node, so the id of the next result is known
// before the backward closure is built.
std::size_t NextId(const Graph& g) { return g.num_nodes(); }

bool Wants(const Graph& g, std::size_t id) { return g.node(id).requires_grad; }

// Elementwise op whose derivative is a function of (input, output).
template <typename Forward, typename Derivative>
Tensor Unary(const char* kind, const Tensor& x, Forward forward, Derivative derivative) {
  Graph& g = x.graph();
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit(kind, {x}, x.shape(), std::move(out), [&g, xi, yi, derivative] {
    const auto& dy = g.node(yi).grad;
    const auto& xv = g.node(xi).value;
    const auto& yv = g.node(yi).value;
    auto& dx = g.GradOf(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * derivative(xv[i], yv[i]);
  });
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireSameGraph("add", a, b);
  RequireSameShape("add", a, b);
  Graph& g = a.graph();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id(), bi = b.id(), yi = NextId(g);
  return g.Emit("add", {a, b}, a.shape(), std::move(out), [&g, ai, bi, yi] {
    const auto& dy = g.node(yi).grad;
    if (Wants(g, ai)) {
      auto& da = g.GradOf(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (Wants(g, bi)) {
      auto& db = g.GradOf(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  RequireSameGraph("sub", a, b);
  RequireSameShape("sub", a, b);
  Graph& g = a.graph();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id(), bi = b.id(), yi = NextId(g);
  return g.Emit("sub", {a, b}, a.shape(), std::move(out), [&g, ai, bi, yi] {
    const auto& dy = g.node(yi).grad;
    if (Wants(g, ai)) {
      auto& da = g.GradOf(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (Wants(g, bi)) {
      auto& db = g.GradOf(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
    }
  });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  RequireSameGraph("mul", a, b);
  RequireSameShape("mul", a, b);
  Graph& g = a.graph();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id(), yi = NextId(g);
  return g.Emit("mul", {a, b}, a.shape(), std::move(out), [&g, ai, bi, yi] {
    const auto& dy = g.node(yi).grad;
    const auto& av = g.node(ai).value;
    const auto& bv = g.node(bi).value;
    if (Wants(g, ai)) {
      auto& da = g.GradOf(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (Wants(g, bi)) {
      auto& db = g.GradOf(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Tensor AddScalar(const Tensor& x, double c) {
  return Unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor MulScalar(const Tensor& x, double c) {
  return Unary(
      "mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor Exp(const Tensor& x) {
  return Unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor Log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return Unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor Silu(const Tensor& x) {
  return Unary(
      "silu", x, [](double v) { return v * Sigmoid(v); },
      [](double v, double) {
        const double s = Sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor Softplus(const Tensor& x) {
  return Unary(
      "softplus", x,
      [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return Sigmoid(v); });
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  RequireSameGraph("matmul", a, b);
  RequireRank("matmul", a, 2);
  RequireRank("matmul", b, 2);
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul: inner extents disagree, " + ShapeToString(a.shape()) +
                         " x " + ShapeToString(b.shape()));
  }
  Graph& g = a.graph();
  const double* av = a.data().data();
  const double* bv = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ai = a.id(), bi = b.id(), yi = NextId(g);
  return g.Emit("matmul", {a, b}, {m, n}, std::move(out), [&g, ai, bi, yi, m, k, n] {
    const double* dy = g.node(yi).grad.data();
    const double* av = g.node(ai).value.data();
    const double* bv = g.node(bi).value.data();
    if (Wants(g, ai)) {
      // dA = dC . B^T
      double* da = g.GradOf(ai).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = bv + p * n;
          const double* drow = dy + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
          da[i * k + p] += acc;
        }
      }
    }
    if (Wants(g, bi)) {
      // dB = A^T . dC
      double* db = g.GradOf(bi).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* drow = dy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          double* dbrow = db + p * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * drow[j];
        }
      }
    }
  });
}

Tensor BatchedMatMul(const Tensor& a, const Tensor& b) {
  RequireSameGraph("batched_matmul", a, b);
  RequireRank("batched_matmul", a, 3);
  RequireRank("batched_matmul", b, 3);
  const std::size_t batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  if (b.extent(0) != batch || b.extent(1) != k) {
    throw DimensionError("batched_matmul: extents disagree, " + ShapeToString(a.shape()) +
                         " x " + ShapeToString(b.shape()));
  }
  Graph& g = a.graph();
  const double* av = a.data().data();
  const double* bv = b.data().data();
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* as = av + s * m * k;
    const double* bs = bv + s * k * n;
    double* cs = out.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = as[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = bs + p * n;
        double* crow = cs + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  const std::size_t ai = a.id(), bi = b.id(), yi = NextId(g);
  return g.Emit("batched_matmul", {a, b}, {batch, m, n}, std::move(out),
                [&g, ai, bi, yi, batch, m, k, n] {
                  const double* dy = g.node(yi).grad.data();
                  const double* av = g.node(ai).value.data();
                  const double* bv = g.node(bi).value.data();
                  double* da = Wants(g, ai) ? g.GradOf(ai).data() : nullptr;
                  double* db = Wants(g, bi) ? g.GradOf(bi).data() : nullptr;
                  for (std::size_t s = 0; s < batch; ++s) {
                    const double* dys = dy + s * m * n;
                    const double* as = av + s * m * k;
                    const double* bs = bv + s * k * n;
                    if (da != nullptr) {
                      double* das = da + s * m * k;
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < n; ++j) acc += dys[i * n + j] * bs[p * n + j];
                          das[i * k + p] += acc;
                        }
                      }
                    }
                    if (db != nullptr) {
                      double* dbs = db + s * k * n;
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = as[i * k + p];
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < n; ++j) dbs[p * n + j] += aip * dys[i * n + j];
                        }
                      }
                    }
                  }
                });
}

Tensor Reshape(const Tensor& x, Shape shape) {
  if (NumElements(shape) != x.size()) {
    throw DimensionError("reshape: " + ShapeToString(x.shape()) + " to " + ShapeToString(shape));
  }
  Graph& g = x.graph();
  std::vector<double> out(x.data().begin(), x.data().end());
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("reshape", {x}, std::move(shape), std::move(out), [&g, xi, yi] {
    const auto& dy = g.node(yi).grad;
    auto& dx = g.GradOf(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

namespace {

// Maps each output flat index to its input flat index under an axis permutation.
std::vector<std::size_t> TransposeIndex(const Shape& in_shape, std::span<const std::size_t> axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in_shape[d];
  Shape out_shape(rank);
  std::vector<std::size_t> stride_of_out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[axes[d]];
    stride_of_out[d] = in_strides[axes[d]];
  }
  const std::size_t total = NumElements(in_shape);
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    index[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += stride_of_out[d];
      if (counter[d] < out_shape[d]) break;
      src -= stride_of_out[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace

Tensor Transpose(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank || rank > 4) {
    throw DimensionError("transpose: axes do not match rank of " + ShapeToString(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ContractError("transpose: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = x.extent(axes[d]);
  auto index = TransposeIndex(x.shape(), axes);
  auto in = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = in[index[i]];
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("transpose", {x}, std::move(out_shape), std::move(out),
                [&g, xi, yi, index = std::move(index)] {
                  const auto& dy = g.node(yi).grad;
                  auto& dx = g.GradOf(xi);
                  for (std::size_t i = 0; i < index.size(); ++i) dx[index[i]] += dy[i];
                });
}

Tensor GatherRows(const Tensor& table, std::span<const int> rows) {
  RequireRank("gather_rows", table, 2);
  const std::size_t n_rows = table.extent(0), cols = table.extent(1);
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= n_rows) {
      throw ContractError("gather_rows: row " + std::to_string(r) + " out of range " +
                          std::to_string(n_rows));
    }
  }
  auto in = table.data();
  std::vector<double> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  Graph& g = table.graph();
  const std::size_t ti = table.id(), yi = NextId(g);
  return g.Emit("gather_rows", {table}, {rows.size(), cols}, std::move(out),
                [&g, ti, yi, cols, rows = std::vector<int>(rows.begin(), rows.end())] {
                  const auto& dy = g.node(yi).grad;
                  auto& dt = g.GradOf(ti);
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    double* dst = dt.data() + static_cast<std::size_t>(rows[i]) * cols;
                    const double* src = dy.data() + i * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                });
}

Tensor Take(const Tensor& x, std::span<const std::size_t> indices) {
  auto in = x.data();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= in.size()) throw ContractError("take: index out of range");
    out[i] = in[indices[i]];
  }
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("take", {x}, {indices.size()}, std::move(out),
                [&g, xi, yi, idx = std::vector<std::size_t>(indices.begin(), indices.end())] {
                  const auto& dy = g.node(yi).grad;
                  auto& dx = g.GradOf(xi);
                  for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += dy[i];
                });
}

Tensor Pick(const Tensor& x, std::span<const int> cols) {
  RequireRank("pick", x, 2);
  const std::size_t rows = x.extent(0), width = x.extent(1);
  if (cols.size() != rows) throw DimensionError("pick: one column per row required");
  std::vector<std::size_t> flat(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= width) {
      throw ContractError("pick: column " + std::to_string(cols[i]) + " out of range");
    }
    flat[i] = i * width + static_cast<std::size_t>(cols[i]);
  }
  return Take(x, flat);
}

Tensor RmsNorm(const Tensor& x, const Tensor& scale, double eps) {
  RequireSameGraph("rms_norm", x, scale);
  RequireRank("rms_norm", x, 2);
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (scale.shape() != Shape{d}) {
    throw DimensionError("rms_norm: scale " + ShapeToString(scale.shape()) + " for width " +
                         std::to_string(d));
  }
  const double* xv = x.data().data();
  const double* gv = scale.data().data();
  std::vector<double> out(n * d);
  std::vector<double> inv_rms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += xv[r * d + c] * xv[r * d + c];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * inv_rms[r] * gv[c];
  }
  Graph& g = x.graph();
  const std::size_t xi = x.id(), si = scale.id(), yi = NextId(g);
  return g.Emit("rms_norm", {x, scale}, x.shape(), std::move(out),
                [&g, xi, si, yi, n, d, inv_rms = std::move(inv_rms)] {
                  const double* dy = g.node(yi).grad.data();
                  const double* xv = g.node(xi).value.data();
                  const double* gv = g.node(si).value.data();
                  if (Wants(g, xi)) {
                    double* dx = g.GradOf(xi).data();
                    for (std::size_t r = 0; r < n; ++r) {
                      const double inv = inv_rms[r];
                      double dot = 0.0;
                      for (std::size_t c = 0; c < d; ++c) dot += gv[c] * dy[r * d + c] * xv[r * d + c];
                      const double coeff = inv * inv * inv * dot / static_cast<double>(d);
                      for (std::size_t c = 0; c < d; ++c) {
                        dx[r * d + c] += inv * gv[c] * dy[r * d + c] - xv[r * d + c] * coeff;
                      }
                    }
                  }
                  if (Wants(g, si)) {
                    double* ds = g.GradOf(si).data();
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t c = 0; c < d; ++c) {
                        ds[c] += dy[r * d + c] * xv[r * d + c] * inv_rms[r];
                      }
                    }
                  }
                });
}

Tensor LogSoftmax(const Tensor& x) {
  RequireRank("log_softmax", x, 2);
  const std::size_t n = x.extent(0), m = x.extent(1);
  const double* xv = x.data().data();
  std::vector<double> out(n * m);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv + r * m;
    const double mx = *std::max_element(row, row + m);
    double sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = row[c] - lse;
  }
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("log_softmax", {x}, x.shape(), std::move(out), [&g, xi, yi, n, m] {
    const double* dy = g.node(yi).grad.data();
    const double* yv = g.node(yi).value.data();
    double* dx = g.GradOf(xi).data();
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < m; ++c) total += dy[r * m + c];
      for (std::size_t c = 0; c < m; ++c) {
        dx[r * m + c] += dy[r * m + c] - std::exp(yv[r * m + c]) * total;
      }
    }
  });
}

Tensor MaskedSoftmax(const Tensor& logits, const AttentionMask& mask) {
  RequireRank("masked_softmax", logits, 3);
  const std::size_t heads = logits.extent(0), q = logits.extent(1), k = logits.extent(2);
  if (mask.side() != q || mask.side() != k) {
    throw DimensionError("masked_softmax: mask side " + std::to_string(mask.side()) +
                         " for logits " + ShapeToString(logits.shape()));
  }
  for (std::size_t t = 0; t < q; ++t) {
    if (!mask.RowHasPermittedKey(t)) {
      throw DegenerateRowError("masked_softmax: query row " + std::to_string(t) +
                               " has no permitted key");
    }
  }
  const double* xv = logits.data().data();
  std::vector<double> out(heads * q * k, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < q; ++t) {
      const std::uint8_t* allowed = mask.row(t);
      const double* row = xv + (h * q + t) * k;
      double* orow = out.data() + (h * q + t) * k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u < k; ++u) {
        if (allowed[u] != 0 && row[u] > mx) mx = row[u];
      }
      double sum = 0.0;
      for (std::size_t u = 0; u < k; ++u) {
        if (allowed[u] == 0) continue;
        orow[u] = std::exp(row[u] - mx);
        sum += orow[u];
      }
      for (std::size_t u = 0; u < k; ++u) {
        if (allowed[u] != 0) orow[u] /= sum;
      }
    }
  }
  Graph& g = logits.graph();
  const std::size_t xi = logits.id(), yi = NextId(g);
  return g.Emit("masked_softmax", {logits}, logits.shape(), std::move(out),
                [&g, xi, yi, heads, q, k] {
                  const double* dy = g.node(yi).grad.data();
                  const double* yv = g.node(yi).value.data();
                  double* dx = g.GradOf(xi).data();
                  for (std::size_t r = 0; r < heads * q; ++r) {
                    double dot = 0.0;
                    for (std::size_t u = 0; u < k; ++u) dot += yv[r * k + u] * dy[r * k + u];
                    for (std::size_t u = 0; u < k; ++u) {
                      dx[r * k + u] += yv[r * k + u] * (dy[r * k + u] - dot);
                    }
                  }
                });
}

Tensor Sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("sum", {x}, {}, {total}, [&g, xi, yi] {
    const double dy = g.node(yi).grad[0];
    for (double& v : g.GradOf(xi)) v += dy;
  });
}

Tensor Mean(const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean of empty tensor");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double count = static_cast<double>(x.size());
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("mean", {x}, {}, {total / count}, [&g, xi, yi, count] {
    const double dy = g.node(yi).grad[0] / count;
    for (double& v : g.GradOf(xi)) v += dy;
  });
}

Tensor Max(const Tensor& x) {
  auto v = x.data();
  if (v.empty()) throw ContractError("max of empty tensor");
  const std::size_t arg =
      static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("max", {x}, {}, {v[arg]}, [&g, xi, yi, arg] {
    g.GradOf(xi)[arg] += g.node(yi).grad[0];
  });
}

Tensor SegmentMean(const Tensor& x, std::span<const std::size_t> offsets) {
  RequireRank("segment_mean", x, 1);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.size()) {
    throw ContractError("segment_mean: offsets must run from 0 to the input length");
  }
  const std::size_t segments = offsets.size() - 1;
  auto in = x.data();
  std::vector<double> out(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractError("segment_mean: empty segment");
    double total = 0.0;
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) total += in[i];
    out[s] = total / static_cast<double>(offsets[s + 1] - offsets[s]);
  }
  Graph& g = x.graph();
  const std::size_t xi = x.id(), yi = NextId(g);
  return g.Emit("segment_mean", {x}, {segments}, std::move(out),
                [&g, xi, yi, off = std::vector<std::size_t>(offsets.begin(), offsets.end())] {
                  const auto& dy = g.node(yi).grad;
                  auto& dx = g.GradOf(xi);
                  for (std::size_t s = 0; s + 1 < off.size(); ++s) {
                    const double share = dy[s] / static_cast<double>(off[s + 1] - off[s]);
                    for (std::size_t i = off[s]; i < off[s + 1]; ++i) dx[i] += share;
                  }
                });
}

}  // namespace invarirank::numerics
