#include "camadapt/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "camadapt/error.hpp"

namespace camadapt {

ContentBox detect_content(const Image& image, double threshold) {
  if (image.height <= 0 || image.width <= 0) {
    fail(ErrorKind::kDegenerateInput, "empty image");
  }
  std::vector<double> col_mean(image.width, 0.0), row_mean(image.height, 0.0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const double v = image.at(c, y, x);
        col_mean[x] += v;
        row_mean[y] += v;
      }
    }
  }
  ContentBox box;
  for (int x = 0; x < image.width; ++x) {
    if (col_mean[x] / (3.0 * image.height) > threshold) {
      if (box.x1 < 0) box.x0 = x;
      box.x1 = x;
    }
  }
  for (int y = 0; y < image.height; ++y) {
    if (row_mean[y] / (3.0 * image.width) > threshold) {
      if (box.y1 < 0) box.y0 = y;
      box.y1 = y;
    }
  }
  if (box.x1 < 0 || box.y1 < 0) {
    fail(ErrorKind::kDegenerateInput, "no content above the black-margin threshold");
  }
  const double area = static_cast<double>(box.width()) * box.height();
  if (area < kMinContentFraction * image.height * image.width) {
    fail(ErrorKind::kDegenerateInput, "content region covers less than 10% of the frame");
  }
  return box;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) fail(ErrorKind::kInvalidArgument, "resize to empty size");
  if (height == image.height && width == image.width) return image;
  Image out(height, width);
  const double sy = height > 1 ? static_cast<double>(image.height - 1) / (height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(image.width - 1) / (width - 1) : 0.0;
  for (int y = 0; y < height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), image.height - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), image.width - 1);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
        const double bottom = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

Image square_and_resize(const Image& image, int target_size) {
  if (target_size <= 0) fail(ErrorKind::kInvalidArgument, "target size must be positive");
  const ContentBox box = detect_content(image);
  const int side = std::max(box.width(), box.height());
  Image square(side, side, 0.0);
  const int off_y = (side - box.height()) / 2;
  const int off_x = (side - box.width()) / 2;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < box.height(); ++y) {
      for (int x = 0; x < box.width(); ++x) {
        square.at(c, y + off_y, x + off_x) = image.at(c, box.y0 + y, box.x0 + x);
      }
    }
  }
  return resize_bilinear(square, target_size, target_size);
}

}  // namespace camadapt
