#pragma once

#include "camadapt/image.hpp"

namespace camadapt {

struct ContentBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
};

// Rows/columns are content when their mean intensity over all channels
// exceeds this level.
inline constexpr double kContentThreshold = 0.02;
// Minimum content box area as a fraction of the frame.
inline constexpr double kMinContentFraction = 0.10;

// Bounding box of the field of view. Throws kDegenerateInput when the box is
// empty or smaller than kMinContentFraction of the frame.
ContentBox detect_content(const Image& image, double threshold = kContentThreshold);

// Bilinear resampling with corner-aligned sampling grid; same-size resizing
// returns the input unchanged.
Image resize_bilinear(const Image& image, int height, int width);

// Crops to the content box, zero-pads the short side to a centred square and
// resizes to target_size x target_size.
Image square_and_resize(const Image& image, int target_size);

}  // namespace camadapt
