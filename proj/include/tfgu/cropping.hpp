#pragma once

#include <string>
#include <vector>

#include "tfgu/common.hpp"

namespace tfgu {

/// Square sliding-window crop in pixel coordinates.
struct CropRect {
  int x = 0, y = 0;
  int side = 0;
  double beta = 0.0;
  std::string image_id;

  bool operator==(const CropRect&) const = default;
};

/// Binary foreground prior on the patch grid.
struct ForegroundPrior {
  LabelGrid mask;  // values in {0, 1}
};

enum class CropGroup { foreground, background, neutral };

inline constexpr double kDefaultFgThreshold = 0.5;
inline constexpr double kDefaultBgThreshold = 0.8;

/// Cells strictly greater than the grid mean become 1.
ForegroundPrior binarize_attention(const Grid& attention);

/// Windows of side round(β·min(H,W)) at stride round(½·β·min(H,W)), per β in
/// order. A flush-to-border row/column is appended when the stride does not
/// land on the border. β outside (0, 1] is a ConfigError; a β whose window
/// rounds to zero pixels is skipped and reported through `skipped`.
std::vector<CropRect> generate_windows(int height, int width, const std::vector<double>& betas,
                                       const std::string& image_id = {},
                                       std::vector<double>* skipped = nullptr);

/// Counts pixels of `rect` against the prior upsampled (nearest) to the image
/// size: foreground when the fg fraction exceeds fg_thresh, else background
/// when the bg fraction exceeds bg_thresh, else neutral.
CropGroup classify_patch(const CropRect& rect, const ForegroundPrior& prior, int image_height,
                         int image_width, double fg_thresh = kDefaultFgThreshold,
                         double bg_thresh = kDefaultBgThreshold);

/// Crops `rect` and bilinearly resizes it to target_side². A target of 0
/// selects min(H,W)/2.
Image crop_resize(const Image& image, const CropRect& rect, int target_side = 0);

const char* to_string(CropGroup g);

}  // namespace tfgu
