#include "physattn/graph.hpp"

#include <string>

#include "physattn/error.hpp"

namespace physattn {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  if (options_.check_finite && !value.all_finite()) throw NumericError("non-finite constant recorded on graph");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param) {
  if (options_.check_finite && !param.value.all_finite()) {
    throw NumericError("parameter '" + param.name + "' holds non-finite values");
  }
  Node node;
  node.op = "parameter";
  node.value = param.value;
  node.requires_grad = true;
  node.param = &param;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  if (options_.check_finite && !value.all_finite()) {
    throw NumericError("operation '" + std::string(op) + "' produced non-finite values");
  }
  Node node;
  node.op = op;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ContractError("record: input node does not exist on this graph");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor* Graph::grad_slot(NodeId id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.grad_allocated) {
    node.grad = Tensor(node.value.shape());
    node.grad_allocated = true;
  }
  return &node.grad;
}

Graph::GradTarget Graph::grad_target(NodeId id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return {};
  if (!node.grad_allocated) {
    node.grad = Tensor::uninitialized(node.value.shape());
    node.grad_allocated = true;
    return {&node.grad, true};
  }
  return {&node.grad, false};
}

Tensor Graph::grad(NodeId id) const {
  const Node& node = nodes_[id];
  if (node.grad_allocated) return node.grad;
  return Tensor(node.value.shape());
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(nodes_[loss.id].value.shape()));
  }
  for (Node& node : nodes_) {
    if (node.grad_allocated) node.grad.fill(0.0);
  }
  Tensor* seed = grad_slot(loss.id);
  if (seed == nullptr) return;  // loss does not depend on any parameter
  seed->fill(1.0);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad_allocated) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.shape() != node.grad.shape()) p.grad = Tensor(node.grad.shape());
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += node.grad[k];
      p.has_grad = true;
    }
  }
}

std::size_t Graph::bytes() const {
  std::size_t total = 0;
  for (const Node& node : nodes_) {
    total += node.value.size() * sizeof(double);
    if (node.grad_allocated) total += node.grad.size() * sizeof(double);
  }
  return total;
}

}  // namespace physattn
