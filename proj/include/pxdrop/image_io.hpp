// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pxdrop {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> bytes;  // interleaved, row-major
};

void write_pnm(const std::filesystem::path& path, const Image8& image);
Image8 read_pnm(const std::filesystem::path& path);

// Planar [3,H,W] values in [-1,1] -> interleaved RGB bytes.
Image8 planar_to_rgb(const float* planar, int height, int width);

// Linear min-max scaling of a single-channel map to 0..255 (flat maps -> 0).
Image8 map_to_gray(const float* values, int height, int width);

}  // namespace pxdrop
