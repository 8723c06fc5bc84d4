#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deft/tensor.hpp"

namespace deft {

/// Reverse-mode automatic differentiation over dense tensors.
///
/// Each operation records a node holding its output value, the input nodes,
/// and a pull-back closure that routes the node's gradient into the inputs.
/// Nodes whose inputs carry no gradient requirement are constant-folded:
/// they keep no parents and no closure, so inference paths build no tape.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on first accumulation, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (grad.size() == 0 && value.size() > 0) grad = Tensor(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

/// Lightweight handle to a graph node. Copying shares the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node(std::move(n)) {}

  static Var leaf(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(n);
  }

  static Var constant(Tensor v) { return leaf(std::move(v), false); }
  static Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

  bool defined() const { return node != nullptr; }
  const Tensor& value() const { return node->value; }
  Tensor& mutable_value() { return node->value; }
  const Tensor& grad() const { return node->grad; }
  Tensor& grad_ref() { return node->ensure_grad(); }
  bool requires_grad() const { return node && node->requires_grad; }

  void zero_grad() {
    if (node && node->grad.size() > 0) node->grad.fill(0.0);
  }

  const std::vector<int>& shape() const { return node->value.shape(); }
  int dim(int i) const { return node->value.dim(i); }

  NodePtr node;
};

/// Creates an op node. When no input requires a gradient the result is a
/// constant leaf and `backprop` is discarded.
inline Var make_op(Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const Var& v : inputs) rg = rg || v.requires_grad();
  if (!rg) return Var::constant(std::move(value));
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (Var& v : inputs) n->inputs.push_back(std::move(v.node));
  n->backprop = std::move(backprop);
  return Var(n);
}

namespace detail {

inline void topo_visit(Node* n, std::unordered_set<const Node*>& seen,
                       std::vector<Node*>& order) {
  // Iterative post-order DFS; graphs from long unrolled loops would blow the
  // call stack with recursion.
  struct Frame {
    Node* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({n, 0});
  seen.insert(n);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      Node* child = f.node->inputs[f.next_input++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

/// Backpropagates from a scalar root: seeds d(root)/d(root) = 1 and pulls
/// gradients through the recorded closures in reverse topological order.
/// Gradients accumulate; callers zero parameter grads between steps.
inline void backward(const Var& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.value().size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root.requires_grad()) return;

  std::unordered_set<const Node*> seen;
  std::vector<Node*> order;
  detail::topo_visit(root.node.get(), seen, order);

  root.node->ensure_grad();
  root.node->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() > 0) n->backprop(*n);
  }
}

}  // namespace deft
