#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a shared handle to a graph node. Operations whose inputs
// require gradients record their parents and a backward closure; backward()
// walks the recorded graph in reverse topological order and accumulates
// gradients into every participating node.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "glp/common.hpp"

namespace glp::nn {

using Dims = std::vector<std::size_t>;

inline std::size_t numel_of(const Dims& d) {
  return std::accumulate(d.begin(), d.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string dims_str(const Dims& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(d[i]);
  }
  return s + "]";
}

namespace detail {

inline thread_local bool grad_mode = true;
inline thread_local bool parameters_frozen = false;

}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Graphs recorded while alive treat parameter tensors as constants, so a
/// backward pass leaves their gradients untouched. Thread-local, which lets
/// concurrent callers differentiate w.r.t. inputs of one shared model.
class FreezeParametersGuard {
 public:
  FreezeParametersGuard() : prev_(detail::parameters_frozen) {
    detail::parameters_frozen = true;
  }
  ~FreezeParametersGuard() { detail::parameters_frozen = prev_; }
  FreezeParametersGuard(const FreezeParametersGuard&) = delete;
  FreezeParametersGuard& operator=(const FreezeParametersGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Dims shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  bool is_parameter = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<bool> parent_needs_grad;
  std::function<void(Node&)> backward;

  bool tracks_grad() const {
    return requires_grad && !(is_parameter && detail::parameters_frozen);
  }

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Dims shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Dims shape, T v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->value.assign(numel_of(shape), v);
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Dims shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("tensor of shape " + dims_str(shape) + " needs " +
                       std::to_string(numel_of(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Dims& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_parameter() const { return node_->is_parameter; }
  void mark_parameter() { node_->is_parameter = true; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// A new leaf holding a copy of the values.
  Tensor detach() const { return from(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an operation. The graph edge is recorded only
/// when gradient mode is on and some input tracks gradients; `backward`
/// receives the finished node and must accumulate into the parents flagged in
/// parent_needs_grad.
template <class T>
Tensor<T> make_result(Dims shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
  if (!detail::grad_mode) return out;
  bool any = false;
  std::vector<bool> needs;
  for (const Tensor<T>* in : inputs) {
    const bool n = in->defined() && in->node()->tracks_grad();
    needs.push_back(n);
    any = any || n;
  }
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  node->parent_needs_grad = std::move(needs);
  for (const Tensor<T>* in : inputs) node->parents.push_back(in->node_ptr());
  node->backward = std::move(backward);
  return out;
}

/// Accumulates d(loss)/d(node) into every node reachable from `loss`.
/// Gradients of interior nodes are recomputed on each call (and stay readable
/// afterwards); gradients of leaves accumulate across calls.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward needs a scalar loss");
  if (!loss.requires_grad()) {
    throw UsageError("backward on a tensor detached from any gradient graph");
  }
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next].get();
      const bool follow = node->parent_needs_grad[next];
      ++next;
      if (follow && p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace glp::nn
