// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/introspect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pxdrop/ops.hpp"
#include "pxdrop/text.hpp"

namespace pxdrop {

MapTarget parse_map_target(const std::string& text) {
  if (text == "logit") return MapTarget::PredictedLogit;
  if (text == "loss") return MapTarget::Loss;
  throw ConfigError("unknown explanation target '" + text + "' (expected logit|loss)");
}

std::string to_string(MapTarget target) {
  return target == MapTarget::Loss ? "loss" : "logit";
}

ExplanationMap explanation_map(const LogitFn& logits_of, const Tensor& image, MapTarget target,
                               int label) {
  if (image.dim() != 3)
    throw ShapeError("explanation_map: expected a [C,H,W] image, got " + shape_str(image.shape()));
  const std::size_t c = image.size(0), h = image.size(1), w = image.size(2);
  Tensor input({1, c, h, w}, std::vector<float>(image.values().begin(), image.values().end()));
  input.set_requires_grad(true);
  const Tensor logits = logits_of(input);
  if (logits.dim() != 2 || logits.size(0) != 1)
    throw ShapeError("explanation_map: logits must be [1,K], got " + shape_str(logits.shape()));

  ExplanationMap map;
  map.source = target;
  const float* z = logits.data();
  const int predicted = static_cast<int>(std::max_element(z, z + logits.size(1)) - z);
  Tensor scalar;
  if (target == MapTarget::PredictedLogit) {
    map.class_index = predicted;
    const int idx[1] = {predicted};
    scalar = sum(pick(logits, std::span<const int>(idx)));
  } else {
    if (label < 0) throw Error("explanation_map: the loss target needs a label");
    map.class_index = label;
    const int idx[1] = {label};
    scalar = cross_entropy(logits, std::span<const int>(idx));
  }

  std::vector<float> raw(c * h * w, 0.0f);
  if (scalar.requires_grad()) {
    scalar.backward();
    if (input.has_grad()) {
      const auto& g = input.grad();
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::fabs(g[i]);
    }
  }
  std::vector<float> agg(h * w, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) agg[p] += raw[ch * h * w + p];
  map.raw = Tensor({c, h, w}, std::move(raw));
  map.values = Tensor({h, w}, std::move(agg));
  return map;
}

ExplanationMap explanation_map(const Model& model, const Tensor& image, MapTarget target,
                               int label) {
  return explanation_map(
      [&model](const Tensor& x) { return model.forward(x, Mode::Eval, false); }, image, target,
      label);
}

Tensor spatial_mask(const Tensor& bits) {
  if (bits.dim() != 3)
    throw ShapeError("spatial_mask: expected [C,H,W] mask, got " + shape_str(bits.shape()));
  const std::size_t c = bits.size(0), hw = bits.size(1) * bits.size(2);
  std::vector<float> out(hw, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p)
      if (bits.data()[ch * hw + p] != 0.0f) out[p] = 1.0f;
  return Tensor({bits.size(1), bits.size(2)}, std::move(out));
}

MaskSplit mask_split(const ExplanationMap& map, const Mask& mask) {
  const Tensor keep = mask.bits.dim() == 3 ? spatial_mask(mask.bits) : mask.bits;
  if (keep.shape() != map.values.shape())
    throw ShapeError("mask_split: map " + shape_str(map.values.shape()) + " vs mask " +
                     shape_str(mask.bits.shape()));
  const std::size_t n = keep.numel();
  std::vector<float> kept(n), dropped(n);
  double total = 0.0, on_dropped = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float e = map.values.data()[i];
    const bool k = keep.data()[i] != 0.0f;
    kept[i] = k ? e : 0.0f;
    dropped[i] = k ? 0.0f : e;
    total += e;
    on_dropped += dropped[i];
  }
  MaskSplit split;
  split.kept = Tensor(keep.shape(), std::move(kept));
  split.dropped = Tensor(keep.shape(), std::move(dropped));
  split.dropped_fraction = total > 0.0 ? on_dropped / total : 0.0;
  return split;
}

double center_concentration(std::span<const float> filter, std::size_t channels,
                            std::size_t kh, std::size_t kw) {
  if (filter.size() != channels * kh * kw)
    throw ShapeError("center_concentration: filter size does not match its shape");
  const std::size_t center = (kh / 2) * kw + kw / 2;
  double total = 0.0, middle = 0.0;
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t t = 0; t < kh * kw; ++t) {
      const double a = std::fabs(static_cast<double>(filter[ch * kh * kw + t]));
      total += a;
      if (t == center) middle += a;
    }
  return total > 0.0 ? middle / total : 0.0;
}

FilterExport export_filters(const Checkpoint& checkpoint) {
  const Tensor& w = checkpoint.at("stem.conv.weight");
  if (w.dim() != 4 || w.size(1) != 3)
    throw ShapeError("export_filters: first layer must take 3 input channels, weight is " +
                     shape_str(w.shape()));
  const std::size_t k = w.size(0), kh = w.size(2), kw = w.size(3), per = 3 * kh * kw;
  FilterExport out;
  for (std::size_t f = 0; f < k; ++f) {
    const auto taps = w.values().subspan(f * per, per);
    out.concentration.push_back(center_concentration(taps, 3, kh, kw));
    const auto [lo_it, hi_it] = std::minmax_element(taps.begin(), taps.end());
    const double lo = *lo_it, range = static_cast<double>(*hi_it) - lo;
    Image8 img;
    img.width = static_cast<int>(kw);
    img.height = static_cast<int>(kh);
    img.channels = 3;
    img.bytes.resize(per);
    for (std::size_t y = 0; y < kh; ++y)
      for (std::size_t x = 0; x < kw; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = taps[(ch * kh + y) * kw + x];
          const double scaled = range > 0.0 ? (v - lo) / range * 255.0 : 127.5;
          img.bytes[(y * kw + x) * 3 + ch] =
              static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
        }
    out.images.push_back(std::move(img));
  }
  return out;
}

void write_filters(const FilterExport& filters, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "filters_summary.csv", std::ios::binary);
  if (!csv) throw Error("cannot write " + (dir / "filters_summary.csv").string());
  csv << "filter,concentration\n";
  for (std::size_t f = 0; f < filters.images.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "filter_%03zu.ppm", f);
    write_pnm(dir / name, filters.images[f]);
    csv << f << ',' << format_number(filters.concentration[f]) << '\n';
  }
  if (!csv) throw Error("failed writing filters_summary.csv");
}

}  // namespace pxdrop
