// SPDX-License-Identifier: Apache-2.0
// The AVX2 kernels against the scalar reference, plus the ordering guarantees
// each variant makes about its own results.
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pxdrop/model.hpp"
#include "pxdrop/ops.hpp"
#include "pxdrop/simd/kernels.hpp"
#include "test_util.hpp"

namespace pxdrop {
namespace {

using simd::Isa;
using simd::KernelTable;

std::vector<float> randv(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

// Exercises both tile paths and every remainder length.
const std::size_t kSizes[] = {1, 3, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100};

class SimdEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!simd::isa_supported(Isa::Avx2)) GTEST_SKIP() << "AVX2/FMA not available";
    fast = &simd::table(Isa::Avx2);
    ref = &simd::table(Isa::Scalar);
  }
  const KernelTable* fast = nullptr;
  const KernelTable* ref = nullptr;
};

TEST_F(SimdEquivalence, Gemm) {
  std::mt19937_64 gen(1);
  for (std::size_t m : {1, 4, 5, 9})
    for (std::size_t n : kSizes)
      for (std::size_t k : {1, 7, 27, 64}) {
        const auto a = randv(m * k, gen), b = randv(k * n, gen), c0 = randv(m * n, gen);
        for (bool acc : {false, true}) {
          auto c1 = c0, c2 = c0;
          fast->gemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, acc);
          ref->gemm(m, n, k, a.data(), k, b.data(), n, c2.data(), n, acc);
          for (std::size_t i = 0; i < c1.size(); ++i)
            ASSERT_NEAR(c1[i], c2[i], 1e-5 * (1.0 + k)) << m << "x" << n << "x" << k;
        }
      }
}

TEST_F(SimdEquivalence, GemmNt) {
  std::mt19937_64 gen(2);
  for (std::size_t m : {1, 3, 6})
    for (std::size_t n : {1, 3, 4, 5, 9})
      for (std::size_t k : kSizes) {
        const auto a = randv(m * k, gen), b = randv(n * k, gen), c0 = randv(m * n, gen);
        for (bool acc : {false, true}) {
          auto c1 = c0, c2 = c0;
          fast->gemm_nt(m, n, k, a.data(), k, b.data(), k, c1.data(), n, acc);
          ref->gemm_nt(m, n, k, a.data(), k, b.data(), k, c2.data(), n, acc);
          for (std::size_t i = 0; i < c1.size(); ++i) ASSERT_NEAR(c1[i], c2[i], 1e-5 * (1.0 + k));
        }
      }
}

TEST_F(SimdEquivalence, VectorKernels) {
  std::mt19937_64 gen(3);
  for (std::size_t n : kSizes) {
    const auto x = randv(n, gen), y = randv(n, gen);
    EXPECT_NEAR(fast->dot(x.data(), y.data(), n), ref->dot(x.data(), y.data(), n), 1e-5 * n);

    auto y1 = y, y2 = y;
    fast->axpy(0.37f, x.data(), y1.data(), n);
    ref->axpy(0.37f, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);

    std::vector<float> o1(n), o2(n);
    fast->mul(x.data(), y.data(), o1.data(), n);
    ref->mul(x.data(), y.data(), o2.data(), n);
    EXPECT_EQ(o1, o2);

    fast->relu(x.data(), o1.data(), n);
    ref->relu(x.data(), o2.data(), n);
    EXPECT_EQ(o1, o2);

    auto g1 = y, g2 = y;
    fast->relu_backward(x.data(), y.data(), g1.data(), n);
    ref->relu_backward(x.data(), y.data(), g2.data(), n);
    EXPECT_EQ(g1, g2);
  }
}

// Within one variant, an output element must not depend on which tile it
// fell into, so a row computed alone equals the same row inside a batch.
void expect_batch_invariant(const KernelTable& t) {
  std::mt19937_64 gen(4);
  const std::size_t m = 7, n = 37, k = 29;
  const auto a = randv(m * k, gen), b = randv(k * n, gen);
  std::vector<float> full(m * n);
  t.gemm(m, n, k, a.data(), k, b.data(), n, full.data(), n, false);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<float> row(n);
    t.gemm(1, n, k, a.data() + i * k, k, b.data(), n, row.data(), n, false);
    for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(row[j], full[i * n + j]) << simd::isa_name(t.isa);
    // One column alone takes the scalar remainder path.
    float one = 0.0f;
    t.gemm(1, 1, k, a.data() + i * k, k, b.data() + n - 1, n, &one, 1, false);
    ASSERT_EQ(one, full[i * n + n - 1]);
  }

  const auto bt = randv(n * k, gen);
  std::vector<float> nt(m * n);
  t.gemm_nt(m, n, k, a.data(), k, bt.data(), k, nt.data(), n, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      ASSERT_EQ(nt[i * n + j], t.dot(a.data() + i * k, bt.data() + j * k, k));
}

TEST(SimdOrdering, ScalarIsBatchInvariant) { expect_batch_invariant(simd::table(Isa::Scalar)); }

TEST_F(SimdEquivalence, Avx2IsBatchInvariant) { expect_batch_invariant(*fast); }

TEST_F(SimdEquivalence, ModelForwardAndBackwardAgree) {
  ModelSpec spec;
  spec.widths = {4, 8, 8};
  spec.num_classes = 5;
  spec.input_side = 16;
  const Model model(spec, 3);
  std::mt19937_64 gen(5);
  const Tensor x = testing::random_tensor<float>({3, 3, 16, 16}, gen);
  const std::vector<int> labels{0, 2, 4};

  auto run = [&](Isa isa) {
    simd::force_isa(isa);
    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    const Tensor logits = model.forward(leaf, Mode::Eval, false);
    cross_entropy(logits, labels).backward();
    return std::make_pair(std::vector<float>(logits.values().begin(), logits.values().end()),
                          std::vector<float>(leaf.grad().begin(), leaf.grad().end()));
  };
  const auto [z_fast, g_fast] = run(Isa::Avx2);
  const auto [z_ref, g_ref] = run(Isa::Scalar);
  simd::force_isa(simd::isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar);
  for (std::size_t i = 0; i < z_ref.size(); ++i) EXPECT_NEAR(z_fast[i], z_ref[i], 1e-4);
  for (std::size_t i = 0; i < g_ref.size(); ++i) EXPECT_NEAR(g_fast[i], g_ref[i], 1e-4);
}

TEST(SimdDispatch, ScalarAlwaysAvailable) {
  EXPECT_TRUE(simd::isa_supported(Isa::Scalar));
  EXPECT_EQ(simd::table(Isa::Scalar).isa, Isa::Scalar);
  EXPECT_EQ(simd::isa_name(Isa::Avx2), "avx2");
}

}  // namespace
}  // namespace pxdrop
