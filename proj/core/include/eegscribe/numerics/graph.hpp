#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::nx {

class Graph;

/// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Reverse-mode tape. Nodes are appended in creation order, so every input of
/// a node precedes it; backward() walks the tape strictly in reverse.
class Graph {
 public:
  /// Propagates the node's gradient to its inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf holding a copy of `value`; receives no gradient outside the graph.
  Var constant(Tensor value);
  /// Leaf for data that never needs a gradient. Operations whose inputs are
  /// all untracked skip their backward pass entirely.
  Var input(Tensor value);
  /// Leaf bound to an external tensor. If the tensor requires grad, backward()
  /// accumulates into its gradient buffer.
  Var parameter(Tensor& tensor);

  /// Appends an operation node.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated zeroed on first use.
  std::span<double> grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  /// Whether gradients flow into this node (false for input leaves and
  /// anything computed only from them).
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  std::span<const double> grad_of(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  /// Gradients accumulate into bound parameters; callers zero them between steps.
  void backward(Var loss);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    std::vector<double> grad;
    bool tracked = true;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

}  // namespace eegscribe::nx
