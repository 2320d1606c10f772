#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nmt/core/error.hpp"

namespace nmt::tensor {

// Every tensor in this library is a row-major matrix; vectors are 1 x n and
// scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << rows << 'x' << cols << ']';
    return os.str();
  }
};

// Graph recording switch. Disabled inside NoGradGuard scopes.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = {rows, cols};
    n->value.assign(rows * cols, T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(std::size_t rows, std::size_t cols, T fill, bool requires_grad = false) {
    auto t = zeros(rows, cols, requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
    return t;
  }

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<T> values,
                     bool requires_grad = false) {
    if (values.size() != rows * cols)
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + Shape{rows, cols}.str());
    auto n = std::make_shared<Node<T>>();
    n->shape = {rows, cols};
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  T& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Leaf copy sharing no graph history.
  Tensor detach() const { return from(rows(), cols(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + shape().str());
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (!n->backward_fn || n->grad.empty()) continue;
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Allocates an op output; records parents only when a gradient can flow.
template <class T>
Tensor<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value.assign(shape.size(), T(0));
  if (grad_enabled()) {
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto* t : inputs) n->parents.push_back(t->node_ptr());
    }
  }
  return Tensor<T>(std::move(n));
}

template <class T>
Tensor<T> make_result(Shape shape, const std::vector<Tensor<T>>& inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value.assign(shape.size(), T(0));
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    }
  }
  return Tensor<T>(std::move(n));
}

inline void shape_check(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

}  // namespace detail

}  // namespace nmt::tensor
