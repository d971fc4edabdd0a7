#pragma once

#include <filesystem>

#include "tfgu/common.hpp"

namespace tfgu {

/// Axis-aligned rectangle in continuous coordinates (x right, y down).
struct RectF {
  double x = 0, y = 0, width = 0, height = 0;
};

// Resampling uses pixel-center alignment: output sample i maps to source
// coordinate (i + 0.5) · in/out − 0.5, clamped to the source extent.

Grid resize_bilinear(const Grid& src, int rows, int cols);
Stack resize_bilinear(const Stack& src, int rows, int cols);
Image resize_bilinear(const Image& src, int rows, int cols);
LabelGrid resize_nearest(const LabelGrid& src, int rows, int cols);
Grid resize_nearest(const Grid& src, int rows, int cols);

/// Bilinear crop of `rect` (source pixel units) resampled to rows×cols.
Image crop_bilinear(const Image& src, const RectF& rect, int rows, int cols);
/// RoI-Align with one sample per output bin at the bin centre. `rect` is in
/// grid-cell units where cell c spans [c, c+1).
Grid roi_align(const Grid& src, const RectF& rect, int rows, int cols);

Image flip_horizontal(const Image& src);
Grid flip_horizontal(const Grid& src);
Image gaussian_blur(const Image& src, double sigma);

Image read_image(const std::filesystem::path& path);
void write_image(const Image& img, const std::filesystem::path& path);

/// Reads a single-channel 8-bit mask raster.
LabelGrid read_mask(const std::filesystem::path& path);
/// Writes a single-channel 8-bit PNG. Values must lie in [0, 255].
void write_mask(const LabelGrid& grid, const std::filesystem::path& path);

}  // namespace tfgu
