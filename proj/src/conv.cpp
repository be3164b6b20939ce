// SPDX-License-Identifier: Apache-2.0
//
// conv2d via im2col + GEMM. Columns are rebuilt in the backward pass rather
// than cached, trading a cheap gather for a large memory saving.
#include <algorithm>

#include "pxdrop/ops.hpp"
#include "pxdrop/simd/kernels.hpp"

namespace pxdrop {
namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// Output columns [lo, hi) read inside the image for kernel offset `d`.
struct ValidRange {
  std::size_t lo, hi;
};

inline ValidRange valid_range(std::size_t d, std::size_t pad, std::size_t stride,
                              std::size_t extent, std::size_t out_extent) {
  // ox*stride + d - pad in [0, extent)
  std::size_t lo = 0;
  if (pad > d) lo = (pad - d + stride - 1) / stride;
  std::size_t hi = 0;
  if (extent + pad > d) hi = std::min(out_extent, (extent + pad - d - 1) / stride + 1);
  if (hi < lo) hi = lo = std::min(lo, out_extent);
  return {std::min(lo, out_extent), hi};
}

// col[(ci*kh + dy)*kw + dx, oy*ow + ox] = x[ci, oy*s + dy - p, ox*s + dx - p]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t pos = g.positions();
  for (std::size_t dx = 0; dx < g.kw; ++dx) {
    const ValidRange cols = valid_range(dx, g.pad, g.stride, g.w, g.ow);
    for (std::size_t dy = 0; dy < g.kh; ++dy) {
      const ValidRange rows = valid_range(dy, g.pad, g.stride, g.h, g.oh);
      for (std::size_t ci = 0; ci < g.c; ++ci) {
        T* row = col + ((ci * g.kh + dy) * g.kw + dx) * pos;
        std::fill(row, row + rows.lo * g.ow, T(0));
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const std::size_t iy = oy * g.stride + dy - g.pad;
          T* out = row + oy * g.ow;
          const T* src = x + (ci * g.h + iy) * g.w + (cols.lo * g.stride + dx - g.pad);
          std::fill(out, out + cols.lo, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (cols.hi - cols.lo), out + cols.lo);
          } else {
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox, src += g.stride) out[ox] = *src;
          }
          std::fill(out + cols.hi, out + g.ow, T(0));
        }
        std::fill(row + rows.hi * g.ow, row + pos, T(0));
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t pos = g.positions();
  for (std::size_t dx = 0; dx < g.kw; ++dx) {
    const ValidRange cols = valid_range(dx, g.pad, g.stride, g.w, g.ow);
    for (std::size_t dy = 0; dy < g.kh; ++dy) {
      const ValidRange rows = valid_range(dy, g.pad, g.stride, g.h, g.oh);
      for (std::size_t ci = 0; ci < g.c; ++ci) {
        const T* row = col + ((ci * g.kh + dy) * g.kw + dx) * pos;
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const std::size_t iy = oy * g.stride + dy - g.pad;
          const T* in = row + oy * g.ow;
          T* dst = x + (ci * g.h + iy) * g.w + (cols.lo * g.stride + dx - g.pad);
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox, dst += g.stride) *dst += in[ox];
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::size_t stride, std::size_t padding) {
  const auto mismatch = [&](const std::string& why) {
    return ShapeError("conv2d: " + why + " (input " + shape_str(input.shape()) +
                      ", weight " + shape_str(weight.shape()) + ")");
  };
  if (input.dim() != 4 || weight.dim() != 4) throw mismatch("expected rank-4 operands");
  if (input.size(1) != weight.size(1)) throw mismatch("channel counts differ");
  if (stride == 0) throw mismatch("stride must be positive");
  ConvGeometry g{input.size(0), input.size(1), input.size(2), input.size(3),
                 weight.size(0), weight.size(2), weight.size(3), stride, padding, 0, 0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding)
    throw mismatch("kernel larger than padded input");
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t patch = g.patch(), pos = g.positions();
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.k * pos;
  std::vector<T> out(g.n * out_stride);
  std::vector<T> col(patch * pos);
  for (std::size_t i = 0; i < g.n; ++i) {
    im2col(input.data() + i * in_stride, g, col.data());
    simd::gemm<T>(g.k, pos, patch, weight.data(), patch, col.data(), pos,
                  out.data() + i * out_stride, pos, false);
  }
  return detail::make_result<T>(
      {g.n, g.k, g.oh, g.ow}, std::move(out), "conv2d", {input.node(), weight.node()},
      [g](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const std::size_t patch = g.patch(), pos = g.positions();
        const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.k * pos;
        std::vector<T> col(patch * pos);
        std::vector<T> wt;
        if (px.requires_grad) wt = transpose(pw.values().data(), g.k, patch);
        for (std::size_t i = 0; i < g.n; ++i) {
          const T* gout = self.grad.data() + i * out_stride;
          if (pw.requires_grad) {
            im2col(px.values().data() + i * in_stride, g, col.data());
            simd::gemm_nt<T>(g.k, patch, pos, gout, pos, col.data(), pos,
                             pw.ensure_grad().data(), patch, true);
          }
          if (px.requires_grad) {
            simd::gemm<T>(patch, pos, g.k, wt.data(), g.k, gout, pos, col.data(), pos,
                          false);
            col2im_add(col.data(), g, px.ensure_grad().data() + i * in_stride);
          }
        }
      });
}

template BasicTensor<float> conv2d(const BasicTensor<float>&, const BasicTensor<float>&,
                                   std::size_t, std::size_t);
template BasicTensor<double> conv2d(const BasicTensor<double>&, const BasicTensor<double>&,
                                    std::size_t, std::size_t);

}  // namespace pxdrop
