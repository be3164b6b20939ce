// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Broadcasting is limited to one case: the
// second operand may omit the leading batch dimension of the first.
#pragma once

#include <cstdint>
#include <span>

#include "pxdrop/tensor.hpp"

namespace pxdrop {

enum class Reduction { Mean, Sum };

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

// [N,K] x [K,M] -> [N,M]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);

// Same storage, new shape with equal element count.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

// Rows [begin, end) along the leading dimension.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);

// Stacks b's rows after a's; trailing dimensions must match.
template <typename T>
BasicTensor<T> concat_rows(const BasicTensor<T>& a, const BasicTensor<T>& b);

// [N,C,H,W] -> [N,C]
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// Running statistics of a per-channel normalization layer. Updated in place by
// training-mode forwards, read-only in evaluation mode.
template <typename T>
struct NormStats {
  std::span<T> running_mean;
  std::span<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Per-channel normalization of [N,C,H,W] with learned scale and shift [C].
// Training mode normalizes with batch statistics (biased variance) and folds
// them into the running statistics; evaluation mode uses the running values.
template <typename T>
BasicTensor<T> batch_stat_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, NormStats<T> stats,
                               bool training);

// Row-wise over [N,C].
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& logits);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& logits);

// Mean (or sum) over the batch of -log softmax(logits)[label].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels,
                             Reduction reduction = Reduction::Mean);

// Against target distributions: [N,C], or [C] shared by every row.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target,
                             Reduction reduction = Reduction::Mean);

// Per-row logit margin z[label] - max_{c != label} z[c], shape [N]. Ties in
// the competing maximum resolve to the lowest class index.
template <typename T>
BasicTensor<T> class_margin(const BasicTensor<T>& logits, std::span<const int> labels);

// Per-row z[index], shape [N].
template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& logits, std::span<const int> index);

// Cross-correlation of [N,C,H,W] with [K,C,kh,kw] -> [N,K,H',W'],
// H' = (H + 2*padding - kh) / stride + 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::size_t stride, std::size_t padding);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

namespace detail {

// Builds an op result: validates finiteness, wires parents and the backward
// closure only when some parent participates in the tape.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

}  // namespace pxdrop
