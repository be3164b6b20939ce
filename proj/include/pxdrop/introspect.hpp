// SPDX-License-Identifier: Apache-2.0
//
// Input-gradient explanation maps and first-layer filter export.
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "pxdrop/checkpoint.hpp"
#include "pxdrop/image_io.hpp"
#include "pxdrop/model.hpp"
#include "pxdrop/subsample.hpp"

namespace pxdrop {

enum class MapTarget {
  PredictedLogit,  // z[argmax z]
  Loss,            // cross-entropy against a given label
};

MapTarget parse_map_target(const std::string& text);
std::string to_string(MapTarget target);

struct ExplanationMap {
  Tensor values;  // [H,W], channel sum of |grad|
  Tensor raw;     // [C,H,W], |grad|
  MapTarget source = MapTarget::PredictedLogit;
  int class_index = 0;  // predicted class or the label used for the loss
};

// Maps a [1,C,H,W] input to [1,K] logits.
using LogitFn = std::function<Tensor(const Tensor&)>;

// |d s / d X| for one image [C,H,W]; s is the predicted logit or the loss.
ExplanationMap explanation_map(const LogitFn& logits, const Tensor& image,
                               MapTarget target = MapTarget::PredictedLogit, int label = -1);

// Same through the eval-mode model.
ExplanationMap explanation_map(const Model& model, const Tensor& image,
                               MapTarget target = MapTarget::PredictedLogit, int label = -1);

struct MaskSplit {
  Tensor kept;     // E o M'
  Tensor dropped;  // E o (1 - M')
  double dropped_fraction = 0.0;  // share of total map mass on dropped locations
};

// Reduces a [C,H,W] mask to [H,W]: a location counts as kept when any of its
// channels is kept.
Tensor spatial_mask(const Tensor& bits);

MaskSplit mask_split(const ExplanationMap& map, const Mask& mask);

// |center taps| / sum |taps| of one [C,kh,kw] filter (0 for an all-zero one).
double center_concentration(std::span<const float> filter, std::size_t channels,
                            std::size_t kh, std::size_t kw);

struct FilterExport {
  std::vector<Image8> images;
  std::vector<double> concentration;
};

// Every first-layer filter, min-max scaled to 0..255 jointly over its
// channels (a constant filter maps to mid-grey).
FilterExport export_filters(const Checkpoint& checkpoint);

// filter_NNN.ppm per filter plus filters_summary.csv (filter, concentration).
void write_filters(const FilterExport& filters, const std::filesystem::path& dir);

}  // namespace pxdrop
