// SPDX-License-Identifier: Apache-2.0
//
// Throughput probe for the kernel variants and a full model step.
#include <chrono>
#include <cstdio>
#include <vector>

#include "pxdrop/model.hpp"
#include "pxdrop/ops.hpp"
#include "pxdrop/simd/kernels.hpp"

using namespace pxdrop;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void bench_gemm(simd::Isa isa, std::size_t m, std::size_t n, std::size_t k) {
  const auto& kt = simd::table(isa);
  std::vector<float> a(m * k, 0.5f), b(k * n, 0.25f), c(m * n);
  int reps = 0;
  const auto t0 = std::chrono::steady_clock::now();
  while (seconds_since(t0) < 0.3) {
    kt.gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    ++reps;
  }
  const double gflops = 2.0 * m * n * k * reps / seconds_since(t0) / 1e9;
  std::printf("gemm %-6s m=%zu n=%zu k=%zu  %.2f GFLOP/s\n",
              std::string(simd::isa_name(isa)).c_str(), m, n, k, gflops);
}

void bench_model(const ModelSpec& spec, std::size_t batch) {
  Model model(spec, 1);
  const auto s = static_cast<std::size_t>(spec.input_side);
  Tensor x = Tensor::full({batch, 3, s, s}, 0.1f);
  std::vector<int> labels(batch, 0);
  int reps = 0;
  auto t0 = std::chrono::steady_clock::now();
  while (seconds_since(t0) < 1.0) {
    auto loss = cross_entropy(model.forward(x, Mode::Train), std::span<const int>(labels));
    loss.backward();
    ++reps;
  }
  const double train_rate = static_cast<double>(reps * batch) / seconds_since(t0);
  reps = 0;
  t0 = std::chrono::steady_clock::now();
  while (seconds_since(t0) < 1.0) {
    auto logits = model.forward(x, Mode::Eval, false);
    ++reps;
  }
  const double eval_rate = static_cast<double>(reps * batch) / seconds_since(t0);
  std::printf("model n=%d widths=%d/%d/%d side=%d: train %.0f img/s, eval %.0f img/s\n",
              spec.depth, spec.widths[0], spec.widths[1], spec.widths[2], spec.input_side,
              train_rate, eval_rate);
}

}  // namespace

int main() {
  for (auto isa : {simd::Isa::Scalar, simd::Isa::Avx2}) {
    if (!simd::isa_supported(isa)) continue;
    bench_gemm(isa, 16, 1024, 144);
    bench_gemm(isa, 64, 64, 576);
  }
  std::printf("active isa: %s\n", std::string(simd::isa_name(simd::active().isa)).c_str());
  for (int side : {16, 24, 32}) {
    bench_model({1, {16, 32, 64}, 8, side, 3}, 32);
    bench_model({1, {8, 16, 32}, 8, side, 3}, 32);
  }
  return 0;
}
