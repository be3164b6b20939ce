// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pxdrop/error.hpp"

namespace pxdrop {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode tape. Forward values live in shared storage
// (so detach/reshape are free); gradients are owned per node.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> storage;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  const std::vector<T>& values() const { return *storage; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(storage->size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

  // Internal: wrap an already-populated node.
  static BasicTensor from_node(NodePtr node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->storage->size(); }

  std::span<const T> values() const { return *node_->storage; }
  const T* data() const { return node_->storage->data(); }
  T item() const;

  // In-place access to a leaf's values (optimizer updates, initialization).
  // Non-leaf tensors are immutable.
  std::span<T> mutable_values();

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  // Same storage, cut from the tape.
  BasicTensor detach() const;
  // Fresh storage copy, cut from the tape.
  BasicTensor clone() const;

  // Reverse sweep from a scalar loss. Populates grad on every reachable
  // requires_grad leaf and consumes the graph: intermediate nodes release
  // their closures and a second call fails.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Throws NumericError naming `what` if any value is NaN or Inf.
template <typename T>
void require_finite(std::span<const T> values, const char* what);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace pxdrop
