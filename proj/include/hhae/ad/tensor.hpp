#pragma once

// Dense row-major tensors and a tape-free reverse-mode autodiff node graph.
//
// Every differentiable value is a `Var<T>`: a shared handle on a `Node<T>`
// holding the forward value, an accumulated gradient, the parent nodes and a
// closure that pushes the node's gradient into its parents. `backward()`
// orders the reachable graph topologically and runs the closures in reverse.
// Graphs are built per sample and released when the last handle goes away;
// parameters are long-lived leaf nodes whose gradients accumulate until
// `zero_grad`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hhae/errors.hpp"

namespace hhae::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) throw ShapeMismatch("tensor data does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  T& at(std::size_t a, std::size_t b, std::size_t c) { return data[(a * shape[1] + b) * shape[2] + c]; }
  const T& at(std::size_t a, std::size_t b, std::size_t c) const { return data[(a * shape[1] + b) * shape[2] + c]; }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

  bool operator==(const Tensor&) const = default;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
inline std::uint64_t next_visit_stamp() {
  thread_local std::uint64_t stamp = 0;
  return ++stamp;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording in the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  std::uint64_t visit = 0;

  std::span<T> grad_span() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(t);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(t);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t dim(std::size_t i) const { return node_->value.shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() const { return node_->value; }
  std::span<const T> data() const { return node_->value.data; }
  T item() const { return node_->value.data.at(0); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated so far; zeros if nothing flowed into this node.
  std::span<T> grad() const { return node_->grad_span(); }
  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an op. The closure receives the result node and
/// must add its gradient into those inputs that require one.
template <class T, class Backward>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward&& bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
      n->backward = std::forward<Backward>(bw);
    }
  }
  return Var<T>(std::move(n));
}

template <class T, class Backward>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
      n->backward = std::forward<Backward>(bw);
    }
  }
  return Var<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate (+=) into
/// every reachable node that requires one.
template <class T>
void backward(const Var<T>& root) {
  if (root.size() != 1) throw ShapeMismatch("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  const std::uint64_t stamp = detail::next_visit_stamp();
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  root.node()->visit = stamp;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && p->visit != stamp) {
        p->visit = stamp;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_span()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

}  // namespace hhae::ad
