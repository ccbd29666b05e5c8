#include "invarirank/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invarirank/errors.hpp"

namespace invarirank::numerics {

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

const Shape& Tensor::shape() const { return graph_->node(id_).shape; }

std::size_t Tensor::size() const { return graph_->node(id_).value.size(); }

std::span<const double> Tensor::data() const { return graph_->node(id_).value; }

std::span<const double> Tensor::grad() const { return graph_->node(id_).grad; }

bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

double Tensor::item() const {
  const auto& value = graph_->node(id_).value;
  if (value.size() != 1) {
    throw ContractError("item() on tensor of shape " + ShapeToString(shape()));
  }
  return value[0];
}

namespace {

Tensor MakeLeaf(Graph& graph, std::deque<Graph::Node>& nodes, Shape shape,
                std::vector<double> values, bool requires_grad) {
  if (NumElements(shape) != values.size()) {
    throw DimensionError("leaf shape " + ShapeToString(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  Graph::Node node;
  node.shape = std::move(shape);
  node.value = std::move(values);
  node.requires_grad = requires_grad;
  nodes.push_back(std::move(node));
  return graph.Handle(nodes.size() - 1);
}

}  // namespace

Tensor Graph::Constant(Shape shape, std::vector<double> values) {
  return MakeLeaf(*this, nodes_, std::move(shape), std::move(values), false);
}

Tensor Graph::Leaf(Shape shape, std::vector<double> values) {
  return MakeLeaf(*this, nodes_, std::move(shape), std::move(values), true);
}

std::vector<double>& Graph::GradOf(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Tensor Graph::Emit(const char* kind, std::initializer_list<Tensor> inputs, Shape shape,
                   std::vector<double> value, std::function<void()> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + kind);
    }
  }
  bool needs_grad = false;
  if (mode_ == GradMode::kRecord) {
    for (const Tensor& in : inputs) {
      if (nodes_[in.id()].requires_grad) needs_grad = true;
    }
  }
  Node node;
  node.shape = std::move(shape);
  node.value = std::move(value);
  node.requires_grad = needs_grad;
  nodes_.push_back(std::move(node));
  const std::size_t out = nodes_.size() - 1;
  if (needs_grad) {
    OpRecord record;
    record.kind = kind;
    for (const Tensor& in : inputs) record.inputs.push_back(in.id());
    record.output = out;
    record.backward = std::move(backward);
    nodes_[out].producer = static_cast<long>(records_.size());
    records_.push_back(std::move(record));
  }
  return Tensor(this, out);
}

void Graph::Backward(const Tensor& loss) {
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        ShapeToString(root.shape));
  }
  if (!root.requires_grad) return;
  for (Node& n : nodes_) {
    if (n.producer >= 0) n.grad.clear();
  }
  GradOf(loss.id())[0] += 1.0;
  if (root.producer < 0) return;
  for (long r = root.producer; r >= 0; --r) {
    const OpRecord& record = records_[static_cast<std::size_t>(r)];
    if (nodes_[record.output].grad.empty()) continue;
    record.backward();
  }
}

void Graph::ZeroGrad() {
  for (Node& n : nodes_) n.grad.clear();
}

}  // namespace invarirank::numerics
