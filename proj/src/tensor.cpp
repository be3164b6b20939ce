// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <sstream>
#include <unordered_set>

namespace pxdrop {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

// Exponent bits all set means Inf or NaN. Branch-free so the loop vectorizes.
template <typename T, typename Bits>
bool all_finite(std::span<const T> values) {
  static_assert(sizeof(T) == sizeof(Bits));
  constexpr Bits exponent = std::is_same_v<T, float> ? Bits(0x7f800000u)
                                                     : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) {
    const Bits bits = std::bit_cast<Bits>(v);
    bad |= Bits((bits & exponent) == exponent);
  }
  return bad == 0;
}

}  // namespace

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (!all_finite<T, Bits>(values))
    throw NumericError(std::string("non-finite value produced by ") + what);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape) {
  node_ = std::make_shared<detail::Node<T>>();
  const std::size_t n = shape_numel(shape);
  node_->shape = std::move(shape);
  node_->storage = std::make_shared<std::vector<T>>(n, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  require_finite<T>(values, "tensor construction");
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->storage = std::make_shared<std::vector<T>>(std::move(values));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(NodePtr node) {
  return BasicTensor(std::move(node));
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return (*node_->storage)[0];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_values() {
  if (!node_->leaf) throw GraphError("cannot mutate the output of an operation");
  return *node_->storage;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (!node_->leaf) throw GraphError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->storage = node_->storage;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->storage = std::make_shared<std::vector<T>>(*node_->storage);
  return BasicTensor(std::move(node));
}

template <typename T>
void BasicTensor<T>::backward() const {
  using NodeT = detail::Node<T>;
  if (numel() != 1)
    throw GraphError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (node_->consumed)
    throw GraphError("backward() called twice on the same graph; run a new forward pass");
  if (!node_->requires_grad)
    throw GraphError("loss does not depend on any tensor that requires grad");

  // Iterative post-order DFS; reverse of the result is a valid reverse sweep.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (!parent->requires_grad || seen.count(parent)) continue;
      if (parent->consumed)
        throw GraphError(std::string("graph through '") + parent->op +
                         "' was already consumed by an earlier backward()");
      seen.insert(parent);
      stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->leaf) continue;
    require_finite<T>(node->grad, node->op);
    if (!node->grad.empty() && node->backward_fn) node->backward_fn(*node);
  }
  for (NodeT* node : order) {
    if (node->leaf) {
      if (!node->grad.empty()) require_finite<T>(node->grad, "backward");
      continue;
    }
    node->consumed = true;
    node->backward_fn = nullptr;
    node->parents.clear();
    std::vector<T>().swap(node->grad);
  }
}

template void require_finite<float>(std::span<const float>, const char*);
template void require_finite<double>(std::span<const double>, const char*);
template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace pxdrop
