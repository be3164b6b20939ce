// SPDX-License-Identifier: Apache-2.0
//
// AVX2 + FMA variants. This translation unit is the only one compiled with
// -mavx2 -mfma; it is reached exclusively through the dispatch table after a
// CPUID check.
#include <immintrin.h>

#include <cmath>

#include "pxdrop/simd/kernels.hpp"

namespace pxdrop::simd {
namespace {

inline void store_tile(float* c, __m256 acc, bool accumulate) {
  if (accumulate) acc = _mm256_add_ps(_mm256_loadu_ps(c), acc);
  _mm256_storeu_ps(c, acc);
}

// One output element, same operation order as the vector lanes.
inline void gemm_element(std::size_t k, const float* a, const float* b,
                         std::size_t ldb, float* c, bool accumulate) {
  float acc = 0.0f;
  for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[p], b[p * ldb], acc);
  *c = accumulate ? *c + acc : acc;
}

template <int Rows>
void gemm_rows(std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc,
               bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 acc0[Rows];
    __m256 acc1[Rows];
    for (int r = 0; r < Rows; ++r) {
      acc0[r] = _mm256_setzero_ps();
      acc1[r] = _mm256_setzero_ps();
    }
    const float* bp = b + j;
    for (std::size_t p = 0; p < k; ++p, bp += ldb) {
      const __m256 b0 = _mm256_loadu_ps(bp);
      const __m256 b1 = _mm256_loadu_ps(bp + 8);
      for (int r = 0; r < Rows; ++r) {
        const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
        acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < Rows; ++r) {
      store_tile(c + r * ldc + j, acc0[r], accumulate);
      store_tile(c + r * ldc + j + 8, acc1[r], accumulate);
    }
  }
  for (; j + 8 <= n; j += 8) {
    __m256 acc[Rows];
    for (int r = 0; r < Rows; ++r) acc[r] = _mm256_setzero_ps();
    const float* bp = b + j;
    for (std::size_t p = 0; p < k; ++p, bp += ldb) {
      const __m256 b0 = _mm256_loadu_ps(bp);
      for (int r = 0; r < Rows; ++r)
        acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), b0, acc[r]);
    }
    for (int r = 0; r < Rows; ++r) store_tile(c + r * ldc + j, acc[r], accumulate);
  }
  for (; j < n; ++j)
    for (int r = 0; r < Rows; ++r)
      gemm_element(k, a + r * lda, b + j, ldb, c + r * ldc + j, accumulate);
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a,
               std::size_t lda, const float* b, std::size_t ldb, float* c,
               std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4)
    gemm_rows<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  for (; i < m; ++i)
    gemm_rows<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

inline float finish_dot(__m256 acc, const float* x, const float* y, std::size_t i,
                        std::size_t n) {
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, acc);
  float total = 0.0f;
  for (float v : lanes) total += v;
  for (; i < n; ++i) total = std::fma(x[i], y[i], total);
  return total;
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  return finish_dot(acc, x, y, i, n);
}

// Four dot products sharing one A row; per element identical to dot_avx2.
void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a,
                  std::size_t lda, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc, bool accumulate) {
  const std::size_t kv = k & ~std::size_t(7);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a + i * lda;
    float* cr = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* b0 = b + j * ldb;
      const float* b1 = b0 + ldb;
      const float* b2 = b1 + ldb;
      const float* b3 = b2 + ldb;
      __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
      __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
      for (std::size_t p = 0; p < kv; p += 8) {
        const __m256 av = _mm256_loadu_ps(ar + p);
        s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
        s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
        s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
        s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
      }
      const float r[4] = {finish_dot(s0, ar, b0, kv, k), finish_dot(s1, ar, b1, kv, k),
                          finish_dot(s2, ar, b2, kv, k), finish_dot(s3, ar, b3, kv, k)};
      for (int q = 0; q < 4; ++q) cr[j + q] = accumulate ? cr[j + q] + r[q] : r[q];
    }
    for (; j < n; ++j) {
      const float r = dot_avx2(ar, b + j * ldb, k);
      cr[j] = accumulate ? cr[j] + r : r;
    }
  }
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void mul_avx2(const float* x, const float* y, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i,
                     _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void relu_avx2(const float* x, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    _mm256_storeu_ps(out + i, _mm256_and_ps(v, _mm256_cmp_ps(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_avx2(const float* x, const float* g, float* gx, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 keep = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 add = _mm256_and_ps(_mm256_loadu_ps(g + i), keep);
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), add));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) gx[i] += g[i];
}

}  // namespace

extern const KernelTable kAvx2Table = {Isa::Avx2, gemm_avx2, gemm_nt_avx2,
                                       dot_avx2,  axpy_avx2, mul_avx2,
                                       relu_avx2, relu_backward_avx2};

}  // namespace pxdrop::simd
