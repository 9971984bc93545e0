#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Operations (see ops.hpp) record their
// inputs and a backward closure while gradient recording is enabled; calling
// backward() on a scalar Var accumulates d(loss)/d(leaf) into every leaf that
// requires a gradient. Nodes hold their inputs, never their consumers, so a
// graph is released as soon as the last Var referring to its output goes away.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "firegan/tensor.hpp"

namespace firegan {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor<T>&)> backward;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient after backward(); zeros if nothing reached this node.
  Tensor<T> grad() const {
    return node_->grad.empty() ? Tensor<T>(node_->value.shape()) : node_->grad;
  }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }

  // Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Builds an op result. Recording happens only if grad mode is on and an
  // input needs a gradient; otherwise the result is a constant leaf.
  static Var make(Tensor<T> value, std::vector<Var> inputs,
                  std::function<void(const Tensor<T>&)> backward) {
    Var out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Accumulates gradients of a scalar into all reachable leaves.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS; deep generator graphs would overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor<T>(root.shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(node->grad);
      // Interior gradients are not needed after propagation.
      node->grad = Tensor<T>();
    }
  }
}

}  // namespace firegan
