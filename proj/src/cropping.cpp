#include "tfgu/cropping.hpp"

#include <algorithm>
#include <cmath>

#include "tfgu/image_ops.hpp"

namespace tfgu {

ForegroundPrior binarize_attention(const Grid& attention) {
  const double m = attention.mean();
  ForegroundPrior p;
  p.mask = (attention.array() > m).cast<int>().matrix();
  return p;
}

namespace {

std::vector<int> positions(int extent, int side, int stride) {
  std::vector<int> out;
  int pos = 0;
  for (; pos + side <= extent; pos += stride) out.push_back(pos);
  if (out.back() + side < extent) out.push_back(extent - side);
  return out;
}

}  // namespace

std::vector<CropRect> generate_windows(int height, int width, const std::vector<double>& betas,
                                       const std::string& image_id, std::vector<double>* skipped) {
  std::vector<CropRect> out;
  const int short_side = std::min(height, width);
  for (double beta : betas) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("crop scale beta must lie in (0, 1]");
    const int side = static_cast<int>(std::lround(beta * short_side));
    const int stride = std::max(1, static_cast<int>(std::lround(0.5 * beta * short_side)));
    if (side < 1 || side > height || side > width) {
      if (skipped) skipped->push_back(beta);
      continue;
    }
    for (int y : positions(height, side, stride))
      for (int x : positions(width, side, stride)) out.push_back({x, y, side, beta, image_id});
  }
  return out;
}

CropGroup classify_patch(const CropRect& rect, const ForegroundPrior& prior, int image_height,
                         int image_width, double fg_thresh, double bg_thresh) {
  const LabelGrid up = resize_nearest(prior.mask, image_height, image_width);
  const LabelGrid window = up.block(rect.y, rect.x, rect.side, rect.side);
  const double total = static_cast<double>(window.size());
  const double fg_pixels = window.sum();
  if (fg_pixels / total > fg_thresh) return CropGroup::foreground;
  if ((total - fg_pixels) / total > bg_thresh) return CropGroup::background;
  return CropGroup::neutral;
}

Image crop_resize(const Image& image, const CropRect& rect, int target_side) {
  if (target_side <= 0) target_side = std::min(image.height(), image.width()) / 2;
  const RectF r{static_cast<double>(rect.x), static_cast<double>(rect.y), static_cast<double>(rect.side),
                static_cast<double>(rect.side)};
  return crop_bilinear(image, r, target_side, target_side);
}

const char* to_string(CropGroup g) {
  switch (g) {
    case CropGroup::foreground: return "fg";
    case CropGroup::background: return "bg";
    case CropGroup::neutral: return "neutral";
  }
  return "?";
}

}  // namespace tfgu
