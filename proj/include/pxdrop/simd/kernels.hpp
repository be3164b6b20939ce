// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <type_traits>

namespace pxdrop::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

// Row-major single-precision kernels. Within one variant every output element
// is accumulated in the same order (k ascending) whether it lands in a vector
// tile or a remainder, so results never depend on batch size.
struct KernelTable {
  Isa isa;

  // C[M,N] = A[M,K] * B[K,N] (+ C when accumulate).
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const float* a,
               std::size_t lda, const float* b, std::size_t ldb, float* c,
               std::size_t ldc, bool accumulate);

  // C[M,N] = A[M,K] * B[N,K]^T (+ C when accumulate). Each element is
  // dot(A row, B row) with the same operation order as `dot`.
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a,
                  std::size_t lda, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc, bool accumulate);

  float (*dot)(const float* x, const float* y, std::size_t n);

  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);

  // out = x * y
  void (*mul)(const float* x, const float* y, float* out, std::size_t n);

  // out = max(x, 0)
  void (*relu)(const float* x, float* out, std::size_t n);

  // gx += g where x > 0
  void (*relu_backward)(const float* x, const float* g, float* gx,
                        std::size_t n);
};

bool isa_supported(Isa isa);

// Kernel table for a specific ISA; throws if unsupported on this CPU.
const KernelTable& table(Isa isa);

// Best supported ISA, unless overridden by force_isa() or the PXDROP_SIMD
// environment variable ("scalar" or "avx2").
const KernelTable& active();

void force_isa(Isa isa);

// Scalar reference implementations, usable for any floating type.
namespace ref {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + acc : acc;
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T acc = dot(a + i * lda, b + j * ldb, k);
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + acc : acc;
    }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void mul(const T* x, const T* y, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void relu(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* g, T* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) gx[i] += g[i];
}

}  // namespace ref

// Type-generic front door used by the tensor ops: float goes through the
// runtime-selected table, other types through the reference loops.
template <typename T>
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 std::size_t lda, const T* b, std::size_t ldb, T* c,
                 std::size_t ldc, bool accumulate) {
  if constexpr (std::is_same_v<T, float>)
    active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  else
    ref::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
  if constexpr (std::is_same_v<T, float>)
    active().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  else
    ref::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
inline T dot(const T* x, const T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    return active().dot(x, y, n);
  else
    return ref::dot(x, y, n);
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().axpy(alpha, x, y, n);
  else
    ref::axpy(alpha, x, y, n);
}

template <typename T>
inline void mul(const T* x, const T* y, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().mul(x, y, out, n);
  else
    ref::mul(x, y, out, n);
}

template <typename T>
inline void relu(const T* x, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().relu(x, out, n);
  else
    ref::relu(x, out, n);
}

template <typename T>
inline void relu_backward(const T* x, const T* g, T* gx, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().relu_backward(x, g, gx, n);
  else
    ref::relu_backward(x, g, gx, n);
}

}  // namespace pxdrop::simd
