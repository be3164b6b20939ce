// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/optim.hpp"

#include <algorithm>
#include <cmath>

namespace pxdrop {

template <typename T>
void sgd_momentum_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                         T lr, T momentum, T weight_decay) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size()))
    throw ShapeError("sgd_momentum_update: parameter holds " + std::to_string(param.size()) +
                     " values, gradient " + std::to_string(grad.size()) + ", velocity " +
                     std::to_string(velocity.size()));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    velocity[i] = momentum * velocity[i] + g + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
SgdMomentum<T>::SgdMomentum(std::vector<BasicTensor<T>> params, T momentum, T weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
}

template <typename T>
void SgdMomentum<T>::step(T lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    sgd_momentum_update<T>(p.mutable_values(), p.grad(), velocity_[i], lr, momentum_,
                           weight_decay_);
    require_finite<T>(p.values(), "sgd step");
  }
}

template <typename T>
void SgdMomentum<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f,
                         const Tensor64& x, double h) {
  Tensor64 leaf = x.clone();
  leaf.set_requires_grad(true);
  const Tensor64 loss = f(leaf);
  std::vector<double> analytic(x.numel(), 0.0);
  if (loss.requires_grad()) {
    loss.backward();
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
  }

  double worst = 0.0;
  std::vector<double> probe(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Tensor64(x.shape(), probe)).item();
    probe[i] = saved - h;
    const double down = f(Tensor64(x.shape(), probe)).item();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

template void sgd_momentum_update<float>(std::span<float>, std::span<const float>,
                                         std::span<float>, float, float, float);
template void sgd_momentum_update<double>(std::span<double>, std::span<const double>,
                                          std::span<double>, double, double, double);
template class SgdMomentum<float>;
template class SgdMomentum<double>;

}  // namespace pxdrop
