// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "pxdrop/dataset.hpp"
#include "pxdrop/image_io.hpp"
#include "test_util.hpp"

namespace pxdrop {
namespace {

using testing::TempDir;

TEST(Normalize, AffineEndpoints) {
  EXPECT_EQ(normalize_byte(0), -1.0f);
  EXPECT_EQ(normalize_byte(255), 1.0f);
  EXPECT_NEAR(normalize_byte(127), -0.00392157f, 1e-7);
}

TEST(Normalize, RoundTripsEveryByte) {
  for (int v = 0; v < 256; ++v)
    EXPECT_EQ(denormalize_byte(normalize_byte(static_cast<std::uint8_t>(v))), v);
}

// Writes `count` records whose bytes are a simple function of the position.
std::vector<std::uint8_t> write_batch(const std::filesystem::path& path, std::size_t count) {
  std::vector<std::uint8_t> bytes(count * kCifarRecordBytes);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const std::size_t r = i / kCifarRecordBytes, off = i % kCifarRecordBytes;
    bytes[i] = off == 0 ? static_cast<std::uint8_t>((r * 7) % 10)
                        : static_cast<std::uint8_t>((r * 31 + off * 13) % 256);
  }
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return bytes;
}

TEST(Cifar10, RecordCountFromFileLength) {
  TempDir dir("cifar_count");
  write_batch(dir / "data_batch_1.bin", 10000);
  const auto records = read_cifar10_batch(dir / "data_batch_1.bin", 0);
  EXPECT_EQ(records.size(), std::filesystem::file_size(dir / "data_batch_1.bin") / 3073);
  EXPECT_EQ(records.size(), 10000u);
}

TEST(Cifar10, MatchesByteOffsetReader) {
  TempDir dir("cifar_offsets");
  const auto bytes = write_batch(dir / "b.bin", 25);
  const auto records = read_cifar10_batch(dir / "b.bin", 100);
  for (std::size_t r : {0u, 1u, 24u}) {
    // Independent reader: record r starts at byte r * 3073; channel c, row y,
    // column x at 1 + c*1024 + y*32 + x.
    const std::size_t base = r * 3073;
    EXPECT_EQ(records[r].label, bytes[base]);
    EXPECT_EQ(records[r].id, 100 + r);
    for (std::size_t p = 0; p < 10; ++p)
      EXPECT_EQ(denormalize_byte(records[r].pixels[p]), bytes[base + 1 + p]);
    const std::size_t c = 2, y = 17, x = 5;
    EXPECT_EQ(denormalize_byte(records[r].pixels[c * 1024 + y * 32 + x]),
              bytes[base + 1 + c * 1024 + y * 32 + x]);
  }
}

TEST(Cifar10, RejectsTruncatedFiles) {
  TempDir dir("cifar_trunc");
  write_batch(dir / "b.bin", 2);
  std::filesystem::resize_file(dir / "b.bin", 3073 * 2 - 1);
  EXPECT_THROW(read_cifar10_batch(dir / "b.bin", 0), FormatError);
}

TEST(Cifar10, RejectsLabelsAboveNine) {
  TempDir dir("cifar_label");
  write_batch(dir / "b.bin", 3);
  std::fstream f(dir / "b.bin", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(3073);
  f.put(static_cast<char>(10));
  f.close();
  EXPECT_THROW(read_cifar10_batch(dir / "b.bin", 0), FormatError);
}

TEST(Cifar10, DirectoryLayoutAndValidationHoldout) {
  TempDir dir("cifar_dir");
  for (int b = 1; b <= 5; ++b) write_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), 1100);
  write_batch(dir / "test_batch.bin", 40);
  const DatasetSplit split = load_cifar10(dir.path());
  EXPECT_EQ(split.train.size(), 500u);
  EXPECT_EQ(split.validation.size(), 5000u);
  EXPECT_EQ(split.test.size(), 40u);
  EXPECT_EQ(split.train.front().id, 0u);
  EXPECT_EQ(split.validation.front().id, 500u);
  EXPECT_EQ(split.validation.back().id, 5499u);
  EXPECT_EQ(split.test.front().id, 5500u);
  EXPECT_EQ(split.num_classes, 10);
  EXPECT_EQ(split.side, 32);
}

TEST(Cifar10, MissingFileIsAnError) {
  TempDir dir("cifar_missing");
  EXPECT_THROW(load_cifar10(dir.path()), Error);
}

SynthSignsOptions small_synth(std::uint64_t seed) {
  SynthSignsOptions o;
  o.n_per_class = 20;
  o.num_classes = 8;
  o.side = 16;
  o.seed = seed;
  return o;
}

TEST(SynthSigns, DeterministicForSeed) {
  const auto a = synth_signs(small_synth(3)), b = synth_signs(small_synth(3));
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].id, b.train[i].id);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
    EXPECT_EQ(a.train[i].pixels, b.train[i].pixels);
  }
  const auto c = synth_signs(small_synth(4));
  EXPECT_NE(a.train[0].pixels, c.train[0].pixels);
}

TEST(SynthSigns, PixelsInRangeAndLabelsValid) {
  const auto d = synth_signs(small_synth(5));
  for (const auto* part : {&d.train, &d.validation, &d.test})
    for (const auto& r : *part) {
      ASSERT_EQ(r.pixels.size(), 3u * 16 * 16);
      EXPECT_LT(r.label, 8);
      EXPECT_GE(r.label, 0);
      for (float v : r.pixels) {
        ASSERT_GE(v, -1.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  EXPECT_FALSE(d.validation.empty());
}

TEST(SynthSigns, PreconditionsAreEnforced) {
  auto o = small_synth(1);
  o.num_classes = 17;
  EXPECT_THROW(synth_signs(o), ConfigError);
  o = small_synth(1);
  o.side = 15;
  EXPECT_THROW(synth_signs(o), ConfigError);
}

std::vector<ImageRecord> dummy_records(std::size_t n) {
  std::vector<ImageRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = static_cast<std::uint32_t>(i);
    out[i].label = static_cast<int>(i % 3);
  }
  return out;
}

TEST(Split, AllTrain) {
  const auto s = split_and_shuffle(dummy_records(50), {1, 0, 0}, 1, 3, 16);
  EXPECT_EQ(s.train.size(), 50u);
  EXPECT_TRUE(s.validation.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, SameSeedSameSplit) {
  const auto a = split_and_shuffle(dummy_records(100), {0.5, 0.3, 0.2}, 9, 3, 16);
  const auto b = split_and_shuffle(dummy_records(100), {0.5, 0.3, 0.2}, 9, 3, 16);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].id, b.train[i].id);
  const auto c = split_and_shuffle(dummy_records(100), {0.5, 0.3, 0.2}, 10, 3, 16);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train[i].id != c.train[i].id;
  EXPECT_TRUE(differs);
}

TEST(Split, PartitionsTheIds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_and_shuffle(dummy_records(97), {0.6, 0.25, 0.15}, seed, 3, 16);
    std::set<std::uint32_t> ids;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (const auto& r : *part) EXPECT_TRUE(ids.insert(r.id).second);
    EXPECT_EQ(ids.size(), 97u);
    EXPECT_EQ(*ids.rbegin(), 96u);
  }
}

TEST(Split, RejectsBadInput) {
  EXPECT_THROW(split_and_shuffle({}, {1, 0, 0}, 0, 3, 16), ConfigError);
  EXPECT_THROW(split_and_shuffle(dummy_records(5), {0.5, 0.2, 0.2}, 0, 3, 16), ConfigError);
}

TEST(Export, PpmFilesAndLabelIndex) {
  TempDir dir("export");
  const auto d = synth_signs(small_synth(6));
  const std::span<const ImageRecord> few(d.test.data(), 3);
  export_records_ppm(few, 16, dir.path());
  const std::string index = testing::read_file(dir / "labels.txt");
  for (const auto& r : few) {
    EXPECT_NE(index.find(std::to_string(r.id) + " " + std::to_string(r.label) + "\n"),
              std::string::npos);
    const Image8 img = read_pnm(dir / (std::to_string(r.id) + ".ppm"));
    EXPECT_EQ(img.width, 16);
    EXPECT_EQ(img.channels, 3);
    // Red channel of pixel (0,0) round-trips through the byte mapping.
    EXPECT_EQ(img.bytes[0], denormalize_byte(r.pixels[0]));
  }
}

TEST(Stack, ShapesAndOrder) {
  const auto d = synth_signs(small_synth(7));
  const Tensor t = stack_images(std::span<const ImageRecord>(d.train.data(), 4), 16);
  EXPECT_EQ(t.shape(), (Shape{4, 3, 16, 16}));
  EXPECT_EQ(t.values()[768], d.train[1].pixels[0]);
}

}  // namespace
}  // namespace pxdrop
