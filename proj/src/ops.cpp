// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/ops.hpp"

#include <algorithm>
#include <cmath>

#include "pxdrop/simd/kernels.hpp"

namespace pxdrop {

namespace detail {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward_fn) {
  require_finite<T>(values, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->storage = std::make_shared<std::vector<T>>(std::move(values));
  node->op = op;
  node->leaf = false;
  const bool tracked = std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p->requires_grad; });
  if (tracked) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

}  // namespace detail

namespace {

using detail::make_result;
using detail::Node;

template <typename T>
using NodeVec = std::vector<std::shared_ptr<Node<T>>>;

// True when b is broadcast along a's leading dimension, false when shapes match.
template <typename T>
bool batch_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (a.dim() == b.dim() + 1 && std::equal(b.shape().begin(), b.shape().end(),
                                           a.shape().begin() + 1))
    return true;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

template <typename T>
std::vector<T> transpose(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  if (x.dim() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got " + shape_str(x.shape()));
}

// Row-wise log-sum-exp and softmax of [N,C] values.
template <typename T>
void softmax_rows(const std::vector<T>& z, std::size_t rows, std::size_t cols,
                  std::vector<T>& prob, std::vector<T>& lse) {
  prob.resize(z.size());
  lse.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* zi = z.data() + i * cols;
    // Accumulated in double so float rows still sum to 1 within a few ulps.
    const double mx = *std::max_element(zi, zi + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(double(zi[c]) - mx);
    lse[i] = static_cast<T>(mx + std::log(total));
    for (std::size_t c = 0; c < cols; ++c)
      prob[i * cols + c] = static_cast<T>(std::exp(double(zi[c]) - mx) / total);
  }
}

template <typename T>
void require_classes(const BasicTensor<T>& logits, const char* op) {
  require_rank(logits, 2, op);
  if (logits.size(1) < 2)
    throw ShapeError(std::string(op) + ": need at least 2 classes, got " +
                     shape_str(logits.shape()));
}

template <typename T>
void require_labels(std::span<const int> labels, std::size_t rows, std::size_t classes,
                    const char* op) {
  if (labels.size() != rows)
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw Error(std::string(op) + ": class index " + std::to_string(y) +
                  " out of range for " + std::to_string(classes) + " classes");
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const bool bcast = batch_broadcast(a, b, "add");
  const std::size_t n = a.numel(), nb = b.numel();
  std::vector<T> out(a.values().begin(), a.values().end());
  const T* bv = b.data();
  for (std::size_t off = 0; off < n; off += nb)
    for (std::size_t j = 0; j < nb; ++j) out[off + j] += bv[j];
  return make_result<T>(a.shape(), std::move(out), "add", {a.node(), b.node()},
                        [n, nb, bcast](Node<T>& self) {
                          const auto& g = self.grad;
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad)
                            simd::axpy(T(1), g.data(), pa.ensure_grad().data(), n);
                          if (pb.requires_grad) {
                            auto& gb = pb.ensure_grad();
                            if (!bcast) {
                              simd::axpy(T(1), g.data(), gb.data(), n);
                            } else {
                              for (std::size_t off = 0; off < n; off += nb)
                                for (std::size_t j = 0; j < nb; ++j) gb[j] += g[off + j];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const bool bcast = batch_broadcast(a, b, "sub");
  const std::size_t n = a.numel(), nb = b.numel();
  std::vector<T> out(a.values().begin(), a.values().end());
  const T* bv = b.data();
  for (std::size_t off = 0; off < n; off += nb)
    for (std::size_t j = 0; j < nb; ++j) out[off + j] -= bv[j];
  return make_result<T>(a.shape(), std::move(out), "sub", {a.node(), b.node()},
                        [n, nb, bcast](Node<T>& self) {
                          const auto& g = self.grad;
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad)
                            simd::axpy(T(1), g.data(), pa.ensure_grad().data(), n);
                          if (pb.requires_grad) {
                            auto& gb = pb.ensure_grad();
                            if (!bcast) {
                              simd::axpy(T(-1), g.data(), gb.data(), n);
                            } else {
                              for (std::size_t off = 0; off < n; off += nb)
                                for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[off + j];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const bool bcast = batch_broadcast(a, b, "mul");
  const std::size_t n = a.numel(), nb = b.numel();
  std::vector<T> out(n);
  if (!bcast) {
    simd::mul(a.data(), b.data(), out.data(), n);
  } else {
    for (std::size_t off = 0; off < n; off += nb)
      simd::mul(a.data() + off, b.data(), out.data() + off, nb);
  }
  return make_result<T>(
      a.shape(), std::move(out), "mul", {a.node(), b.node()},
      [n, nb](Node<T>& self) {
        const auto& g = self.grad;
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& av = pa.values();
        const auto& bv = pb.values();
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          for (std::size_t off = 0; off < n; off += nb)
            for (std::size_t j = 0; j < nb; ++j) ga[off + j] += g[off + j] * bv[j];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t off = 0; off < n; off += nb)
            for (std::size_t j = 0; j < nb; ++j) gb[j] += g[off + j] * av[off + j];
        }
      });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  const std::size_t n = a.numel();
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node()},
                        [n, factor](Node<T>& self) {
                          simd::axpy(factor, self.grad.data(),
                                     self.parents[0]->ensure_grad().data(), n);
                        });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.size(1) != b.size(0))
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  std::vector<T> out(n * m);
  simd::gemm<T>(n, m, k, a.data(), k, b.data(), m, out.data(), m, false);
  return make_result<T>({n, m}, std::move(out), "matmul", {a.node(), b.node()},
                        [n, k, m](Node<T>& self) {
                          const T* g = self.grad.data();
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            const auto bt = transpose(pb.values().data(), k, m);
                            simd::gemm<T>(n, k, m, g, m, bt.data(), k,
                                          pa.ensure_grad().data(), k, true);
                          }
                          if (pb.requires_grad) {
                            const auto at = transpose(pa.values().data(), n, k);
                            simd::gemm<T>(k, m, n, at.data(), n, g, m,
                                          pb.ensure_grad().data(), m, true);
                          }
                        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  simd::relu(x.data(), out.data(), n);
  return make_result<T>(x.shape(), std::move(out), "relu", {x.node()},
                        [n](Node<T>& self) {
                          auto& p = *self.parents[0];
                          simd::relu_backward(p.values().data(), self.grad.data(),
                                              p.ensure_grad().data(), n);
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->storage = x.node()->storage;
  node->op = "reshape";
  node->leaf = false;
  if (x.requires_grad()) {
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backward_fn = [](Node<T>& self) {
      simd::axpy(T(1), self.grad.data(), self.parents[0]->ensure_grad().data(),
                 self.grad.size());
    };
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.values()) total += v;
  return make_result<T>({}, {total}, "sum", {x.node()}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (T& v : self.parents[0]->ensure_grad()) v += g;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.dim() == 0 || begin > end || end > x.size(0))
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") outside " + shape_str(x.shape()));
  const std::size_t row = x.numel() / x.size(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> out(x.data() + begin * row, x.data() + end * row);
  return make_result<T>(std::move(shape), std::move(out), "slice_rows", {x.node()},
                        [begin, row](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          simd::axpy(T(1), self.grad.data(), gx.data() + begin * row,
                                     self.grad.size());
                        });
}

template <typename T>
BasicTensor<T> concat_rows(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dim() == 0 || a.dim() != b.dim() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  Shape shape = a.shape();
  shape[0] += b.size(0);
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.numel(), nb = b.numel();
  return make_result<T>(std::move(shape), std::move(out), "concat_rows", {a.node(), b.node()},
                        [na, nb](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad)
                            simd::axpy(T(1), self.grad.data(), pa.ensure_grad().data(), na);
                          if (pb.requires_grad)
                            simd::axpy(T(1), self.grad.data() + na, pb.ensure_grad().data(), nb);
                        });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  std::vector<T> out(n * c);
  const T* xv = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T total = T(0);
    for (std::size_t s = 0; s < hw; ++s) total += xv[i * hw + s];
    out[i] = total / static_cast<T>(hw);
  }
  return make_result<T>({n, c}, std::move(out), "global_avg_pool", {x.node()},
                        [n, c, hw](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n * c; ++i) {
                            const T g = self.grad[i] / static_cast<T>(hw);
                            for (std::size_t s = 0; s < hw; ++s) gx[i * hw + s] += g;
                          }
                        });
}

template <typename T>
BasicTensor<T> batch_stat_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, NormStats<T> stats,
                               bool training) {
  require_rank(x, 4, "batch_stat_norm");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      stats.running_mean.size() != c || stats.running_var.size() != c)
    throw ShapeError("batch_stat_norm: per-channel parameters do not match " +
                     shape_str(x.shape()));
  const std::size_t count = n * hw;
  if (count == 0) throw ShapeError("batch_stat_norm: normalization over an empty axis");

  const T* xv = x.data();
  const T* gv = gamma.data();
  const T* bv = beta.data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(c);
  std::vector<T> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      T total = T(0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t s = 0; s < hw; ++s) total += xv[(i * c + ch) * hw + s];
      mu = total / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t s = 0; s < hw; ++s) {
          const T d = xv[(i * c + ch) * hw + s] - mu;
          sq += d * d;
        }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      stats.running_mean[ch] =
          (T(1) - stats.momentum) * stats.running_mean[ch] + stats.momentum * mu;
      stats.running_var[ch] =
          (T(1) - stats.momentum) * stats.running_var[ch] + stats.momentum * unbiased;
    } else {
      mu = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    inv_std[ch] = T(1) / std::sqrt(var + stats.eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < hw; ++s) {
        const std::size_t idx = (i * c + ch) * hw + s;
        xhat[idx] = (xv[idx] - mu) * inv_std[ch];
        out[idx] = gv[ch] * xhat[idx] + bv[ch];
      }
  }
  return make_result<T>(
      x.shape(), std::move(out), "batch_stat_norm",
      {x.node(), gamma.node(), beta.node()},
      [n, c, hw, count, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& g = self.grad;
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gamma_v = pg.values();
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) {
              const std::size_t idx = (i * c + ch) * hw + s;
              sum_g += g[idx];
              sum_gx += g[idx] * xhat[idx];
            }
          if (pg.requires_grad) pg.ensure_grad()[ch] += sum_gx;
          if (pb.requires_grad) pb.ensure_grad()[ch] += sum_g;
          if (!px.requires_grad) continue;
          auto& gx = px.ensure_grad();
          const T k = gamma_v[ch] * inv_std[ch];
          if (training) {
            const T mg = sum_g / static_cast<T>(count);
            const T mgx = sum_gx / static_cast<T>(count);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t s = 0; s < hw; ++s) {
                const std::size_t idx = (i * c + ch) * hw + s;
                gx[idx] += k * (g[idx] - mg - xhat[idx] * mgx);
              }
          } else {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t s = 0; s < hw; ++s) {
                const std::size_t idx = (i * c + ch) * hw + s;
                gx[idx] += k * g[idx];
              }
          }
        }
      });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.size(0), c = logits.size(1);
  std::vector<T> prob, lse;
  softmax_rows(*logits.node()->storage, n, c, prob, lse);
  return make_result<T>(logits.shape(), prob, "softmax", {logits.node()},
                        [n, c](Node<T>& self) {
                          const auto& s = self.values();
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            T inner = T(0);
                            for (std::size_t k = 0; k < c; ++k)
                              inner += self.grad[i * c + k] * s[i * c + k];
                            for (std::size_t k = 0; k < c; ++k)
                              gz[i * c + k] += s[i * c + k] * (self.grad[i * c + k] - inner);
                          }
                        });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "log_softmax");
  const std::size_t n = logits.size(0), c = logits.size(1);
  std::vector<T> prob, lse;
  softmax_rows(*logits.node()->storage, n, c, prob, lse);
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = logits.data()[i * c + k] - lse[i];
  return make_result<T>(logits.shape(), std::move(out), "log_softmax", {logits.node()},
                        [n, c, prob = std::move(prob)](Node<T>& self) {
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            T total = T(0);
                            for (std::size_t k = 0; k < c; ++k) total += self.grad[i * c + k];
                            for (std::size_t k = 0; k < c; ++k)
                              gz[i * c + k] += self.grad[i * c + k] - prob[i * c + k] * total;
                          }
                        });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels,
                             Reduction reduction) {
  require_classes(logits, "cross_entropy");
  const std::size_t n = logits.size(0), c = logits.size(1);
  require_labels<T>(labels, n, c, "cross_entropy");
  std::vector<T> prob, lse;
  softmax_rows(*logits.node()->storage, n, c, prob, lse);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) total += lse[i] - logits.data()[i * c + labels[i]];
  const T norm = reduction == Reduction::Mean ? T(1) / static_cast<T>(n) : T(1);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result<T>({}, {total * norm}, "cross_entropy", {logits.node()},
                        [n, c, norm, prob = std::move(prob), ys = std::move(ys)](Node<T>& self) {
                          const T g = self.grad[0] * norm;
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t k = 0; k < c; ++k) gz[i * c + k] += g * prob[i * c + k];
                            gz[i * c + ys[i]] -= g;
                          }
                        });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target,
                             Reduction reduction) {
  require_classes(logits, "cross_entropy");
  const std::size_t n = logits.size(0), c = logits.size(1);
  const bool shared = target.shape() == Shape{c};
  if (!shared && target.shape() != logits.shape())
    throw ShapeError("cross_entropy: target " + shape_str(target.shape()) +
                     " does not match logits " + shape_str(logits.shape()));
  const T* tv = target.data();
  const std::size_t rows = shared ? 1 : n;
  for (std::size_t i = 0; i < rows; ++i) {
    T total = T(0);
    for (std::size_t k = 0; k < c; ++k) {
      if (tv[i * c + k] < T(0)) throw Error("cross_entropy: negative target probability");
      total += tv[i * c + k];
    }
    if (std::abs(total - T(1)) > T(1e-4))
      throw Error("cross_entropy: target distribution row sums to " + std::to_string(total));
  }
  std::vector<T> prob, lse;
  softmax_rows(*logits.node()->storage, n, c, prob, lse);
  std::vector<T> t(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) t[i * c + k] = tv[(shared ? 0 : i) * c + k];
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      total += t[i * c + k] * (lse[i] - logits.data()[i * c + k]);
  const T norm = reduction == Reduction::Mean ? T(1) / static_cast<T>(n) : T(1);
  return make_result<T>({}, {total * norm}, "cross_entropy", {logits.node()},
                        [n, c, norm, prob = std::move(prob), t = std::move(t)](Node<T>& self) {
                          const T g = self.grad[0] * norm;
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            T mass = T(0);
                            for (std::size_t k = 0; k < c; ++k) mass += t[i * c + k];
                            for (std::size_t k = 0; k < c; ++k)
                              gz[i * c + k] += g * (prob[i * c + k] * mass - t[i * c + k]);
                          }
                        });
}

template <typename T>
BasicTensor<T> class_margin(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_classes(logits, "class_margin");
  const std::size_t n = logits.size(0), c = logits.size(1);
  require_labels<T>(labels, n, c, "class_margin");
  std::vector<T> out(n);
  std::vector<std::size_t> own(n), rival(n);
  const T* z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    own[i] = static_cast<std::size_t>(labels[i]);
    std::size_t best = own[i] == 0 ? 1 : 0;
    for (std::size_t k = 0; k < c; ++k)
      if (k != own[i] && z[i * c + k] > z[i * c + best]) best = k;
    rival[i] = best;
    out[i] = z[i * c + own[i]] - z[i * c + best];
  }
  return make_result<T>({n}, std::move(out), "class_margin", {logits.node()},
                        [n, c, own = std::move(own), rival = std::move(rival)](Node<T>& self) {
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            gz[i * c + own[i]] += self.grad[i];
                            gz[i * c + rival[i]] -= self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& logits, std::span<const int> index) {
  require_rank(logits, 2, "pick");
  const std::size_t n = logits.size(0), c = logits.size(1);
  require_labels<T>(index, n, c, "pick");
  std::vector<T> out(n);
  std::vector<std::size_t> at(n);
  for (std::size_t i = 0; i < n; ++i) {
    at[i] = i * c + static_cast<std::size_t>(index[i]);
    out[i] = logits.data()[at[i]];
  }
  return make_result<T>({n}, std::move(out), "pick", {logits.node()},
                        [n, at = std::move(at)](Node<T>& self) {
                          auto& gz = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) gz[at[i]] += self.grad[i];
                        });
}

#define PXDROP_INSTANTIATE_OPS(T)                                                         \
  template BasicTensor<T> detail::make_result<T>(Shape, std::vector<T>, const char*,      \
                                                 std::vector<std::shared_ptr<Node<T>>>,   \
                                                 std::function<void(Node<T>&)>);          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                          \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                     \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                    \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);    \
  template BasicTensor<T> concat_rows(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                         \
  template BasicTensor<T> batch_stat_norm(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                          const BasicTensor<T>&, NormStats<T>, bool);     \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                 \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                             \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>,      \
                                        Reduction);                                       \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                        Reduction);                                       \
  template BasicTensor<T> class_margin(const BasicTensor<T>&, std::span<const int>);      \
  template BasicTensor<T> pick(const BasicTensor<T>&, std::span<const int>);

PXDROP_INSTANTIATE_OPS(float)
PXDROP_INSTANTIATE_OPS(double)

#undef PXDROP_INSTANTIATE_OPS

}  // namespace pxdrop
