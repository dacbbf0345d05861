#include "eegscribe/numerics/graph.hpp"

#include <algorithm>

#include "eegscribe/errors.hpp"

namespace eegscribe::nx {

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, nullptr, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{"input", std::move(value), {}, nullptr, nullptr, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& tensor) {
  Node node{"parameter", tensor, {}, nullptr, &tensor, {}, true};
  node.value.set_requires_grad(false);
  node.value.drop_grad();
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ContractError("graph input recorded before its producer");
  }
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t in) { return nodes_[in].tracked; });
  nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(backward), nullptr, {}, tracked});
  return Var{this, nodes_.size() - 1};
}

std::span<double> Graph::grad(std::size_t id) {
  auto& g = nodes_[id].grad;
  if (g.empty()) g.assign(nodes_[id].value.numel(), 0.0);
  return g;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to a different graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_string(nodes_[loss.id].value.shape()));
  }
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.tracked) continue;
    if (node.backward) node.backward(*this, i);
    if (node.bound != nullptr && node.bound->requires_grad()) {
      auto dst = node.bound->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

}  // namespace eegscribe::nx
