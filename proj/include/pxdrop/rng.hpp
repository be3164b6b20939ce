// SPDX-License-Identifier: Apache-2.0
//
// Counter-based randomness. Every draw in the toolkit is addressed by
// (global seed, purpose, image id, round, sample), so results do not depend
// on evaluation order or thread scheduling.
#pragma once

#include <array>
#include <cstdint>

namespace pxdrop {

enum class Stream : std::uint32_t {
  Init = 1,
  Synth,
  Split,
  Shuffle,
  TrainRate,
  TrainMask,
  TrainNoise,
  EvalMask,
  AttackMask,
  AttackStart,
  AttackTarget,
};

struct RngKey {
  std::uint64_t seed = 0;
  Stream stream = Stream::Init;
  std::uint64_t image = 0;
  std::uint32_t round = 0;
  std::uint32_t sample = 0;
};

// Philox4x32-10 keyed by (seed, stream); the counter carries (image, round,
// sample, block).
class CounterRng {
 public:
  explicit CounterRng(const RngKey& key);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace pxdrop
