#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>
#include <vector>

#include "physattn/param_store.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

class Graph;
using NodeId = std::size_t;

/// Handle to a value recorded on a Graph. References returned by value()
/// stay valid for the lifetime of the graph.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
};

/// Reverse-mode tape. Nodes are appended in construction order, so inputs
/// always precede outputs and the tape is acyclic. A Graph belongs to one
/// thread; independent graphs may run concurrently.
class Graph {
 public:
  /// Called with the output gradient; propagates into input gradient slots
  /// obtained through `grad_slot`.
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  struct Options {
    // Raise NumericError as soon as a recorded value contains NaN/Inf.
    bool check_finite = false;
  };

  Graph() = default;
  explicit Graph(Options options) : options_(options) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Records a trainable leaf. backward() adds into `param.grad`.
  Var parameter(Parameter& param);

  /// Appends an operation node. `backward` is dropped when no input needs a
  /// gradient.
  Var record(std::string_view op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  std::string_view op(NodeId id) const { return nodes_[id].op; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for `id`, allocated on first use; nullptr when the node
  /// does not require a gradient. Valid only during backward().
  Tensor* grad_slot(NodeId id);

  struct GradTarget {
    Tensor* tensor = nullptr;
    /// Set on the node's first contribution: the buffer is uninitialized and
    /// the caller must write every element instead of accumulating.
    bool assign = false;
  };
  /// Like grad_slot, minus the zero fill for a first full contribution.
  GradTarget grad_target(NodeId id);
  /// Gradient accumulated for `id` by the last backward(); zeros if none.
  Tensor grad(NodeId id) const;

  /// Propagates d(loss)/d(node) to every node reachable from the scalar
  /// `loss`, visiting each node once in reverse order, and accumulates
  /// parameter gradients into their Parameter slots.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// Bytes held in node values and gradients.
  std::size_t bytes() const;

 private:
  struct Node {
    std::string_view op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool grad_allocated = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Options options_;
  // A deque keeps value references valid while later nodes are appended.
  std::deque<Node> nodes_;
};

}  // namespace physattn
