// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "pxdrop/simd/kernels.hpp"

namespace pxdrop::simd {

extern const KernelTable kScalarTable;
#ifdef PXDROP_HAVE_AVX2
extern const KernelTable kAvx2Table;
#endif

namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("PXDROP_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &kScalarTable;
    if (want == "avx2" && isa_supported(Isa::Avx2)) return &table(Isa::Avx2);
  }
  if (isa_supported(Isa::Avx2)) return &table(Isa::Avx2);
  return &kScalarTable;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(PXDROP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa))
    throw std::runtime_error("ISA not supported on this CPU: " +
                             std::string(isa_name(isa)));
#ifdef PXDROP_HAVE_AVX2
  if (isa == Isa::Avx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void force_isa(Isa isa) { slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace pxdrop::simd
