// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/image_io.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "pxdrop/dataset.hpp"
#include "pxdrop/error.hpp"

namespace pxdrop {

void write_pnm(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw FormatError("PNM images carry 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.bytes.data()),
            static_cast<std::streamsize>(image.bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  Image8 image;
  in >> magic >> image.width >> image.height >> maxval;
  in.get();
  if ((magic != "P6" && magic != "P5") || maxval != 255 || image.width <= 0 ||
      image.height <= 0)
    throw FormatError(path.string() + ": unsupported PNM header");
  image.channels = magic == "P6" ? 3 : 1;
  image.bytes.resize(static_cast<std::size_t>(image.width) * image.height * image.channels);
  in.read(reinterpret_cast<char*>(image.bytes.data()),
          static_cast<std::streamsize>(image.bytes.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return image;
}

Image8 planar_to_rgb(const float* planar, int height, int width) {
  Image8 image{width, height, 3, {}};
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  image.bytes.resize(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      image.bytes[p * 3 + c] = denormalize_byte(planar[c * plane + p]);
  return image;
}

Image8 map_to_gray(const float* values, int height, int width) {
  Image8 image{width, height, 1, {}};
  const std::size_t n = static_cast<std::size_t>(height) * width;
  image.bytes.assign(n, 0);
  const auto [lo, hi] = std::minmax_element(values, values + n);
  if (*hi <= *lo) return image;
  for (std::size_t i = 0; i < n; ++i)
    image.bytes[i] = static_cast<std::uint8_t>(
        std::clamp((values[i] - *lo) / (*hi - *lo) * 255.0f + 0.5f, 0.0f, 255.0f));
  return image;
}

}  // namespace pxdrop
