#pragma once

// Minimal tape-free reverse-mode autodiff over dense row-major arrays.
//
// Every operation produces a Var holding a shared Node. When gradients are
// enabled and at least one input requires a gradient, the node keeps its
// inputs and a backward closure; backward() walks the graph in reverse
// topological order. Instantiated for float (training) and double (gradient
// checks).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tilemark {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Allocates (zeroed) gradient storage on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Shape shape, std::vector<T> value, bool requires_grad = false);
  static Var zeros(Shape shape, bool requires_grad = false);
  static Var full(Shape shape, T fill, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
// node that requires one. root must hold a single element.
template <typename T>
void backward(const Var<T>& root);

bool grad_enabled();

// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an operation result. The backward closure receives the result node
// (whose grad is populated) and must accumulate into inputs that require
// gradients. Inputs and closure are dropped when no gradient is needed.
template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value,
                   std::vector<std::shared_ptr<Node<T>>> inputs,
                   std::function<void(Node<T>&)> backward_fn);

}  // namespace tilemark
