// SPDX-License-Identifier: Apache-2.0
//
// Bernoulli pixel-drop masks: a subsampled image is the elementwise product
// of the image with a {0,1} mask whose entries are 0 with probability r.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "pxdrop/rng.hpp"
#include "pxdrop/tensor.hpp"

namespace pxdrop {

enum class Granularity {
  PerElement,  // independent draw per (channel, row, column)
  PerPixel,    // one draw per spatial location, shared by all channels
};

enum class DropKind { None, FixedRate, UniformRate };

struct DropPolicy {
  DropKind kind = DropKind::None;
  double rate = 0.0;  // used by FixedRate
  Granularity granularity = Granularity::PerElement;

  static DropPolicy none() { return {}; }
  static DropPolicy fixed(double r, Granularity g = Granularity::PerElement) {
    return {DropKind::FixedRate, r, g};
  }
  static DropPolicy uniform(Granularity g = Granularity::PerElement) {
    return {DropKind::UniformRate, 0.0, g};
  }

  void validate() const;
  std::string describe() const;
};

struct Mask {
  Tensor bits;  // same shape as the image, values in {0,1}
  double rate = 0.0;
  RngKey key;
};

// `shape` is [C,H,W] (or any shape whose last two axes are spatial when
// granularity is PerPixel).
Mask sample_mask(const Shape& shape, double rate, Granularity granularity, const RngKey& key);

// X' = X o M. Shapes must match exactly; gradients flow through as g o M.
Tensor apply_mask(const Tensor& image, const Mask& mask);

// Elementwise product of a batch [N,...] with per-image masks.
Tensor apply_masks(const Tensor& batch, std::span<const Mask> masks);

// Concatenates per-image masks into one [N,...] tensor.
Tensor stack_masks(std::span<const Mask> masks);

// None -> 0, FixedRate -> r, UniformRate -> fresh draw from [0,1].
double draw_rate(const DropPolicy& policy, CounterRng& rng);

Granularity parse_granularity(const std::string& text);
DropKind parse_drop_kind(const std::string& text);
std::string to_string(Granularity g);
std::string to_string(DropKind k);

}  // namespace pxdrop
