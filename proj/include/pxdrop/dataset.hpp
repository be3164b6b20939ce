// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pxdrop/tensor.hpp"

namespace pxdrop {

// One channel-planar [3,side,side] image with values in [-1,1].
struct ImageRecord {
  std::vector<float> pixels;
  int label = 0;
  std::uint32_t id = 0;
};

struct DatasetSplit {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> validation;
  std::vector<ImageRecord> test;
  int num_classes = 0;
  int side = 0;
  int channels = 3;

  Shape image_shape() const {
    return {static_cast<std::size_t>(channels), static_cast<std::size_t>(side),
            static_cast<std::size_t>(side)};
  }
};

// Byte v -> v / 127.5 - 1, so 0 -> -1 and 255 -> +1.
float normalize_byte(std::uint8_t v);
// Inverse of normalize_byte (rounds and clamps values in between).
std::uint8_t denormalize_byte(float v);

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

// Parses one CIFAR-10 binary batch file (label byte + 3072 planar RGB bytes per
// record). Ids are assigned consecutively from first_id.
std::vector<ImageRecord> read_cifar10_batch(const std::filesystem::path& file,
                                            std::uint32_t first_id);

// data_batch_1..5 -> train (last 5000 records held out as validation),
// test_batch -> test.
DatasetSplit load_cifar10(const std::filesystem::path& dir);

struct SynthSignsOptions {
  int n_per_class = 500;
  int num_classes = 8;
  int side = 32;
  std::uint64_t seed = 0;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};  // train, validation, test
};

// Procedural traffic-sign-like dataset: class = (shape, colour) pair drawn
// over a cluttered background with position/scale jitter and additive noise.
DatasetSplit synth_signs(const SynthSignsOptions& options);

// Seeded permutation followed by contiguous slicing by `fractions`.
DatasetSplit split_and_shuffle(std::vector<ImageRecord> records,
                               std::array<double, 3> fractions, std::uint64_t seed,
                               int num_classes, int side);

// Stacks records into a [N,3,side,side] batch.
Tensor stack_images(std::span<const ImageRecord* const> records, int side);
Tensor stack_images(std::span<const ImageRecord> records, int side);

// One P6 file per record plus labels.txt with "id label" lines.
void export_records_ppm(std::span<const ImageRecord> records, int side,
                        const std::filesystem::path& dir);

}  // namespace pxdrop
