// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/simd/kernels.hpp"

namespace pxdrop::simd {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float* c,
                 std::size_t ldc, bool accumulate) {
  ref::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a,
                    std::size_t lda, const float* b, std::size_t ldb, float* c,
                    std::size_t ldc, bool accumulate) {
  ref::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
  return ref::dot(x, y, n);
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  ref::axpy(alpha, x, y, n);
}

void mul_scalar(const float* x, const float* y, float* out, std::size_t n) {
  ref::mul(x, y, out, n);
}

void relu_scalar(const float* x, float* out, std::size_t n) { ref::relu(x, out, n); }

void relu_backward_scalar(const float* x, const float* g, float* gx,
                          std::size_t n) {
  ref::relu_backward(x, g, gx, n);
}

}  // namespace

extern const KernelTable kScalarTable = {
    Isa::Scalar, gemm_scalar, gemm_nt_scalar, dot_scalar,
    axpy_scalar, mul_scalar,  relu_scalar,    relu_backward_scalar};

}  // namespace pxdrop::simd
