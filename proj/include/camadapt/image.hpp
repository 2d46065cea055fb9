#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "camadapt/tensor.hpp"

namespace camadapt {

// Planar RGB image with values in [0, 1]. Channel order is fixed R, G, B.
struct Image {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<double> data;  // [3][height][width]

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(kChannels) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[c * plane() + static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

// 8-bit interleaved RGB as stored on disk.
struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // [height][width][3]
};

// Maps raw values to [0, 1] by dividing by 255.
Image normalize(const RawImage& raw);
// Rounds to the nearest 8-bit level after clamping to [0, 1].
RawImage quantize(const Image& image);

// Reads PNG or JPEG (detected from the file signature). Grayscale and
// alpha inputs are converted to RGB.
RawImage read_raw_image(const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& raw);
void write_png(const std::filesystem::path& path, const Image& image);

// Batch <-> tensor conversion, NCHW.
Tensor to_tensor(const std::vector<Image>& images);
Tensor to_tensor(const Image& image);
Image image_from_tensor(const Tensor& batch, int index);

}  // namespace camadapt
