#pragma once

// Dense float64 arrays recorded on a tape for reverse-mode differentiation.
//
// A Graph owns every node created during one computation. Tensors are
// lightweight handles into that graph. Ops append records in creation order,
// so the record list is always topologically sorted and Backward() walks it
// once, in reverse. All reductions accumulate sequentially in row-major order;
// results are bitwise reproducible for identical inputs.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace invarirank::numerics {

using Shape = std::vector<std::size_t>;

enum class DType { kFloat64 };

std::size_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

class Graph;

class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return graph_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;
  DType dtype() const { return DType::kFloat64; }

  std::span<const double> data() const;
  /// Empty until a backward pass has reached this node.
  std::span<const double> grad() const;
  bool requires_grad() const;

  /// Value of a single-element tensor.
  double item() const;

  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }

 private:
  friend class Graph;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct OpRecord {
  const char* kind = "";
  std::vector<std::size_t> inputs;
  std::size_t output = 0;
  std::function<void()> backward;
};

enum class GradMode { kRecord, kNoGrad };

class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    long producer = -1;  // index into records, -1 for leaves
  };

  explicit Graph(GradMode mode = GradMode::kRecord) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Tensor Constant(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradients across Backward() calls.
  Tensor Leaf(Shape shape, std::vector<double> values);

  /// Populates grads of every node reachable from `loss`. Leaf grads
  /// accumulate across calls; intermediate grads are recomputed.
  void Backward(const Tensor& loss);
  void ZeroGrad();

  GradMode mode() const { return mode_; }
  std::span<const OpRecord> records() const { return records_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  /// Gradient buffer of `id`, zero-allocated on first use.
  std::vector<double>& GradOf(std::size_t id);

  /// Appends the result of an op. `backward` is kept only when recording and
  /// at least one input requires a gradient.
  Tensor Emit(const char* kind, std::initializer_list<Tensor> inputs, Shape shape,
              std::vector<double> value, std::function<void()> backward);

  Tensor Handle(std::size_t id) { return Tensor(this, id); }

 private:
  GradMode mode_;
  std::deque<Node> nodes_;
  std::vector<OpRecord> records_;
};

}  // namespace invarirank::numerics
