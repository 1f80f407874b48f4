#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// A BasicTensor is a handle: copies share the same storage and graph node,
// like torch tensors. Operations that see at least one tracked input (and
// run with gradients enabled) record their inputs and a backward closure on
// the result node. backward() replays the recorded nodes in exact reverse
// execution order.
//
// Storage is float for training and double for gradient checking; every
// reduction accumulates in double regardless.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stk {

using Shape = std::vector<std::size_t>;
using Accum = double;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

std::uint64_t next_sequence();

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// In-place writes are only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  std::vector<T> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool value);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  /// New untracked leaf holding a copy of the values.
  BasicTensor detach() const;
  BasicTensor clone() const { return detach(); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(out), node_->requires_grad);
  }

  /// Populates grads of every tracked ancestor. Leaf grads accumulate
  /// across calls; intermediate grads are rebuilt on each call.
  void backward() const;

  const NodeType* id() const { return node_.get(); }
  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Executed nodes reachable from a root, in execution order.
template <typename T>
class Graph {
 public:
  static Graph trace(const BasicTensor<T>& root);

  const std::vector<detail::Node<T>*>& nodes() const { return nodes_; }
  void backward(const BasicTensor<T>& root);

 private:
  std::vector<detail::Node<T>*> nodes_;
};

/// Builds an op result. When grads are enabled and any input is tracked, the
/// inputs become parents and `backward` is attached.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           const char* op, std::function<void(detail::Node<T>&)> backward);

}  // namespace stk
