// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pxdrop/tensor.hpp"

namespace pxdrop {

// One heavy-ball step on raw buffers:
//   v <- momentum * v + g + weight_decay * p
//   p <- p - lr * v
template <typename T>
void sgd_momentum_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                         T lr, T momentum, T weight_decay);

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<BasicTensor<T>> params, T momentum, T weight_decay);

  // Applies one update using the grads accumulated on the parameters.
  // Parameters without a grad (unused in the last graph) are decayed only.
  void step(T lr);
  void zero_grad();

 private:
  std::vector<BasicTensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  T momentum_;
  T weight_decay_;
};

// Largest |analytic - numeric| / (|analytic| + 1e-8) over all coordinates of
// x, with the numeric side from central differences of step h.
double finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f,
                         const Tensor64& x, double h);

extern template class SgdMomentum<float>;
extern template class SgdMomentum<double>;

}  // namespace pxdrop
