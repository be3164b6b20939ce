// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/subsample.hpp"

#include <sstream>

#include "pxdrop/ops.hpp"

namespace pxdrop {

void DropPolicy::validate() const {
  if (kind == DropKind::FixedRate && !(rate >= 0.0 && rate <= 1.0))
    throw ConfigError("drop rate must lie in [0,1], got " + std::to_string(rate));
}

std::string DropPolicy::describe() const {
  std::ostringstream os;
  os << to_string(kind);
  if (kind == DropKind::FixedRate) os << '(' << rate << ')';
  if (kind != DropKind::None) os << '/' << to_string(granularity);
  return os.str();
}

Mask sample_mask(const Shape& shape, double rate, Granularity granularity,
                 const RngKey& key) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw ConfigError("mask drop rate must lie in [0,1], got " + std::to_string(rate));
  std::vector<float> bits(shape_numel(shape), 1.0f);
  CounterRng rng(key);
  if (granularity == Granularity::PerElement) {
    for (float& b : bits) b = rng.uniform() < rate ? 0.0f : 1.0f;
  } else {
    if (shape.size() < 2)
      throw ShapeError("per-pixel mask needs spatial axes, got " + shape_str(shape));
    const std::size_t plane = shape[shape.size() - 1] * shape[shape.size() - 2];
    const std::size_t planes = bits.size() / plane;
    std::vector<float> keep(plane);
    for (float& b : keep) b = rng.uniform() < rate ? 0.0f : 1.0f;
    for (std::size_t p = 0; p < planes; ++p)
      std::copy(keep.begin(), keep.end(), bits.begin() + p * plane);
  }
  return Mask{Tensor(shape, std::move(bits)), rate, key};
}

Tensor apply_mask(const Tensor& image, const Mask& mask) {
  if (image.shape() != mask.bits.shape())
    throw ShapeError("apply_mask: image " + shape_str(image.shape()) + " vs mask " +
                     shape_str(mask.bits.shape()));
  return mul(image, mask.bits);
}

Tensor stack_masks(std::span<const Mask> masks) {
  if (masks.empty()) throw ShapeError("stack_masks: no masks");
  const Shape& one = masks.front().bits.shape();
  Shape shape{masks.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  std::vector<float> bits;
  bits.reserve(shape_numel(shape));
  for (const Mask& m : masks) {
    if (m.bits.shape() != one)
      throw ShapeError("stack_masks: mixed mask shapes " + shape_str(one) + " and " +
                       shape_str(m.bits.shape()));
    bits.insert(bits.end(), m.bits.values().begin(), m.bits.values().end());
  }
  return Tensor(std::move(shape), std::move(bits));
}

Tensor apply_masks(const Tensor& batch, std::span<const Mask> masks) {
  const Tensor stacked = stack_masks(masks);
  if (batch.shape() != stacked.shape())
    throw ShapeError("apply_masks: batch " + shape_str(batch.shape()) + " vs masks " +
                     shape_str(stacked.shape()));
  return mul(batch, stacked);
}

double draw_rate(const DropPolicy& policy, CounterRng& rng) {
  switch (policy.kind) {
    case DropKind::None:
      return 0.0;
    case DropKind::FixedRate:
      return policy.rate;
    case DropKind::UniformRate:
      return rng.uniform();
  }
  return 0.0;
}

Granularity parse_granularity(const std::string& text) {
  if (text == "element" || text == "per_element") return Granularity::PerElement;
  if (text == "pixel" || text == "per_pixel") return Granularity::PerPixel;
  throw ConfigError("unknown mask granularity '" + text + "' (expected element|pixel)");
}

DropKind parse_drop_kind(const std::string& text) {
  if (text == "none") return DropKind::None;
  if (text == "fixed") return DropKind::FixedRate;
  if (text == "uniform") return DropKind::UniformRate;
  throw ConfigError("unknown drop policy '" + text + "' (expected none|fixed|uniform)");
}

std::string to_string(Granularity g) {
  return g == Granularity::PerElement ? "element" : "pixel";
}

std::string to_string(DropKind k) {
  switch (k) {
    case DropKind::None:
      return "none";
    case DropKind::FixedRate:
      return "fixed";
    case DropKind::UniformRate:
      return "uniform";
  }
  return "none";
}

}  // namespace pxdrop
