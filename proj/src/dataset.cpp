// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pxdrop/image_io.hpp"
#include "pxdrop/rng.hpp"

namespace pxdrop {

float normalize_byte(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint8_t denormalize_byte(float v) {
  const float byte = std::round((v + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(byte, 0.0f, 255.0f));
}

std::vector<ImageRecord> read_cifar10_batch(const std::filesystem::path& file,
                                            std::uint32_t first_id) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open CIFAR-10 batch " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0)
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecordBytes));
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  std::vector<ImageRecord> records(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9)
      throw FormatError(file.string() + ": record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
    records[r].label = rec[0];
    records[r].id = first_id + static_cast<std::uint32_t>(r);
    records[r].pixels.resize(kCifarRecordBytes - 1);
    std::transform(rec + 1, rec + kCifarRecordBytes, records[r].pixels.begin(), normalize_byte);
  }
  return records;
}

DatasetSplit load_cifar10(const std::filesystem::path& dir) {
  constexpr std::size_t kValidation = 5000;
  DatasetSplit split;
  split.num_classes = 10;
  split.side = static_cast<int>(kCifarSide);
  std::uint32_t next_id = 0;
  std::vector<ImageRecord> train;
  for (int b = 1; b <= 5; ++b) {
    auto batch = read_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), next_id);
    next_id += static_cast<std::uint32_t>(batch.size());
    std::move(batch.begin(), batch.end(), std::back_inserter(train));
  }
  if (train.size() <= kValidation)
    throw FormatError(dir.string() + ": too few training records to hold out validation");
  split.validation.assign(std::make_move_iterator(train.end() - kValidation),
                          std::make_move_iterator(train.end()));
  train.resize(train.size() - kValidation);
  split.train = std::move(train);
  split.test = read_cifar10_batch(dir / "test_batch.bin", next_id);
  return split;
}

namespace {

struct Rgb {
  float r, g, b;
};

// Sign face colours in [0,1] display space.
constexpr Rgb kSignColours[4] = {
    {0.86f, 0.10f, 0.12f},  // red
    {0.10f, 0.28f, 0.86f},  // blue
    {0.93f, 0.80f, 0.08f},  // yellow
    {0.08f, 0.66f, 0.22f},  // green
};

enum class SignShape { Circle, Triangle, Square, Diamond };

bool inside(SignShape shape, float dx, float dy, float radius) {
  switch (shape) {
    case SignShape::Circle:
      return dx * dx + dy * dy <= radius * radius;
    case SignShape::Triangle: {
      // Apex up, base at +0.7 radius.
      if (dy < -radius || dy > 0.7f * radius) return false;
      return std::abs(dx) <= (dy + radius) / 1.7f * 1.05f;
    }
    case SignShape::Square:
      return std::max(std::abs(dx), std::abs(dy)) <= 0.78f * radius;
    case SignShape::Diamond:
      return std::abs(dx) + std::abs(dy) <= radius;
  }
  return false;
}

ImageRecord draw_sign(int label, std::uint32_t id, int side, std::uint64_t seed) {
  CounterRng rng({seed, Stream::Synth, id, 0, 0});
  const float s = static_cast<float>(side);
  const auto shape = static_cast<SignShape>(label % 4);
  const Rgb colour = kSignColours[(label / 4) % 4];

  // Background: muted base colour with a linear gradient.
  const float base = 0.25f + 0.45f * static_cast<float>(rng.uniform());
  Rgb tint{base + 0.15f * static_cast<float>(rng.uniform() - 0.5),
           base + 0.15f * static_cast<float>(rng.uniform() - 0.5),
           base + 0.15f * static_cast<float>(rng.uniform() - 0.5)};
  const float gx = 0.25f * static_cast<float>(rng.uniform() - 0.5);
  const float gy = 0.25f * static_cast<float>(rng.uniform() - 0.5);

  // A couple of clutter rectangles.
  struct Box {
    float x0, y0, x1, y1, v;
  };
  Box clutter[2];
  for (Box& b : clutter) {
    const float cx = s * static_cast<float>(rng.uniform());
    const float cy = s * static_cast<float>(rng.uniform());
    const float hw = s * (0.05f + 0.15f * static_cast<float>(rng.uniform()));
    const float hh = s * (0.05f + 0.15f * static_cast<float>(rng.uniform()));
    b = {cx - hw, cy - hh, cx + hw, cy + hh, 0.2f + 0.5f * static_cast<float>(rng.uniform())};
  }

  const float radius = s * (0.28f + 0.12f * static_cast<float>(rng.uniform()));
  const float jitter = s / 8.0f;
  const float cx = s / 2.0f + jitter * static_cast<float>(2.0 * rng.uniform() - 1.0);
  const float cy = s / 2.0f + jitter * static_cast<float>(2.0 * rng.uniform() - 1.0);
  const float brightness = 0.75f + 0.3f * static_cast<float>(rng.uniform());
  const Rgb face{std::clamp(colour.r * brightness + 0.06f * static_cast<float>(rng.normal()), 0.0f, 1.0f),
                 std::clamp(colour.g * brightness + 0.06f * static_cast<float>(rng.normal()), 0.0f, 1.0f),
                 std::clamp(colour.b * brightness + 0.06f * static_cast<float>(rng.normal()), 0.0f, 1.0f)};
  const float rim = 0.85f + 0.1f * static_cast<float>(rng.uniform());
  constexpr float kNoise = 0.08f;

  ImageRecord rec;
  rec.label = label;
  rec.id = id;
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  rec.pixels.resize(3 * plane);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      const float ramp = gx * (px / s - 0.5f) + gy * (py / s - 0.5f);
      Rgb v{tint.r + ramp, tint.g + ramp, tint.b + ramp};
      for (const Box& b : clutter)
        if (px >= b.x0 && px <= b.x1 && py >= b.y0 && py <= b.y1) v = {b.v, b.v, b.v};
      const float dx = px - cx, dy = py - cy;
      if (inside(shape, dx, dy, radius)) {
        v = inside(shape, dx, dy, radius * 0.8f) ? face : Rgb{rim, rim, rim};
      }
      const std::size_t p = static_cast<std::size_t>(y) * side + x;
      const float channel[3] = {v.r, v.g, v.b};
      for (int c = 0; c < 3; ++c) {
        const float value = 2.0f * channel[c] - 1.0f + kNoise * static_cast<float>(rng.normal());
        rec.pixels[c * plane + p] = std::clamp(value, -1.0f, 1.0f);
      }
    }
  return rec;
}

}  // namespace

DatasetSplit synth_signs(const SynthSignsOptions& options) {
  if (options.num_classes < 2 || options.num_classes > 16)
    throw ConfigError("synth_signs supports 2..16 classes, got " +
                      std::to_string(options.num_classes));
  if (options.side < 16)
    throw ConfigError("synth_signs needs side >= 16, got " + std::to_string(options.side));
  if (options.n_per_class < 1) throw ConfigError("synth_signs needs n_per_class >= 1");
  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(options.n_per_class) * options.num_classes);
  std::uint32_t id = 0;
  for (int i = 0; i < options.n_per_class; ++i)
    for (int label = 0; label < options.num_classes; ++label)
      records.push_back(draw_sign(label, id++, options.side, options.seed));
  return split_and_shuffle(std::move(records), options.fractions, options.seed,
                           options.num_classes, options.side);
}

DatasetSplit split_and_shuffle(std::vector<ImageRecord> records,
                               std::array<double, 3> fractions, std::uint64_t seed,
                               int num_classes, int side) {
  if (records.empty()) throw ConfigError("split_and_shuffle: no records");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  // Fisher-Yates driven by the counter RNG.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng({seed, Stream::Split, 0, 0, 0});
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t n = records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));

  DatasetSplit split;
  split.num_classes = num_classes;
  split.side = side;
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord& rec = records[order[i]];
    if (i < n_train)
      split.train.push_back(std::move(rec));
    else if (i < n_train + n_val)
      split.validation.push_back(std::move(rec));
    else
      split.test.push_back(std::move(rec));
  }
  return split;
}

Tensor stack_images(std::span<const ImageRecord* const> records, int side) {
  const std::size_t per = 3 * static_cast<std::size_t>(side) * side;
  std::vector<float> values;
  values.reserve(records.size() * per);
  for (const ImageRecord* rec : records) {
    if (rec->pixels.size() != per)
      throw ShapeError("stack_images: record " + std::to_string(rec->id) + " holds " +
                       std::to_string(rec->pixels.size()) + " values, expected " +
                       std::to_string(per));
    values.insert(values.end(), rec->pixels.begin(), rec->pixels.end());
  }
  const auto s = static_cast<std::size_t>(side);
  return Tensor({records.size(), 3, s, s}, std::move(values));
}

Tensor stack_images(std::span<const ImageRecord> records, int side) {
  std::vector<const ImageRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return stack_images(std::span<const ImageRecord* const>(ptrs), side);
}

void export_records_ppm(std::span<const ImageRecord> records, int side,
                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "labels.txt");
  for (const ImageRecord& rec : records) {
    write_pnm(dir / (std::to_string(rec.id) + ".ppm"),
              planar_to_rgb(rec.pixels.data(), side, side));
    index << rec.id << ' ' << rec.label << '\n';
  }
}

}  // namespace pxdrop
