#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pxiqa/tensor.hpp"

namespace pxiqa {

// Interleaved H x W x C samples on the [0, 255] scale. Values are real so that
// decoder outputs and metric inputs need not be quantized.
struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<double> values;

  Image() = default;
  Image(Index h, Index w, Index c, double fill = 0.0);

  double& at(Index y, Index x, Index c) { return values[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  double at(Index y, Index x, Index c) const {
    return values[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  Index pixel_count() const { return height * width; }
  bool same_geometry(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

// Single-channel H x W plane.
struct Plane {
  Index height = 0;
  Index width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(Index h, Index w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}
  double& at(Index y, Index x) { return values[static_cast<std::size_t>(y * width + x)]; }
  double at(Index y, Index x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

// 8-bit PNG (gray, gray+alpha, RGB, RGBA; alpha dropped, gray expanded to RGB)
// and binary PPM/PGM (P6/P5, maxval 255). Dispatch is by extension.
Image read_image(const std::filesystem::path& path);
// Rounds half away from zero and clamps to [0, 255].
void write_image(const std::filesystem::path& path, const Image& image);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

// Rounded and clamped copy; what write_image stores.
Image quantize_8bit(const Image& image);

// Reflective padding (edge sample not repeated) at the bottom and right.
Image pad_reflect(const Image& image, Index height, Index width);
Image crop(const Image& image, Index y0, Index x0, Index height, Index width);

// Conversions to and from the network layout: 1 x C x H x W on [0, 1].
template <typename T>
Tensor<T> to_tensor(const Image& image);
// Batch entry `n`; values are scaled by 255 and clamped to [0, 255].
template <typename T>
Image from_tensor(const Tensor<T>& tensor, Index n = 0);

}  // namespace pxiqa
