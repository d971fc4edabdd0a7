#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tfgu/common.hpp"

namespace tfgu {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Rows are predicted clusters, columns ground-truth classes.
struct ConfusionMatrix {
  CountMatrix counts;
  std::int64_t total = 0;

  ConfusionMatrix() = default;
  ConfusionMatrix(int k_pred, int k_gt) : counts(CountMatrix::Zero(k_pred, k_gt)) {}

  /// Adds one image. Ignored ground-truth pixels are skipped; out-of-range
  /// predictions or ground-truth values are rejected.
  void add(const LabelGrid& pred, const LabelGrid& gt, int ignore = kIgnoreLabel);
  /// Partial matrices from independent workers sum exactly.
  void merge(const ConfusionMatrix& other);
};

ConfusionMatrix accumulate(std::span<const LabelGrid> pred, std::span<const LabelGrid> gt, int k_pred, int k_gt,
                           int ignore = kIgnoreLabel);

struct Assignment {
  std::vector<int> pred_to_gt;  // -1 for discarded clusters
  std::int64_t matched = 0;     // matched pixel total
};

/// One-to-one assignment of size min(K_pred, K_gt) maximizing the matched
/// pixel count (shortest augmenting path with potentials, O(n²m)).
Assignment hungarian_match(const CountMatrix& counts);

struct EvalReport {
  Assignment assignment;
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::vector<double> per_class_iou;        // per ground-truth class
  std::vector<bool> zero_denominator;       // class had no pixels in pred or gt
  std::int64_t total = 0;

  std::string to_json() const;
};

/// IoU per ground-truth class after relabelling predictions through the
/// assignment; discarded clusters contribute to neither TP nor FP. Classes
/// without a match score 0. mIoU averages over all ground-truth classes.
EvalReport metrics(const ConfusionMatrix& confusion, const Assignment& assignment);
EvalReport evaluate(const ConfusionMatrix& confusion);

using RemapTable = std::map<int, int>;

/// Pointwise substitution; ignore pixels pass through. Unmapped values throw.
LabelGrid remap_labels(const LabelGrid& grid, const RemapTable& table, int ignore = kIgnoreLabel);
/// Two-column "old<TAB>new" text; blank lines and '#' comments skipped.
RemapTable load_remap_table(const std::filesystem::path& path);
void save_remap_table(const RemapTable& table, const std::filesystem::path& path);

/// LIP 19-part labels (plus background) mapped to 16 or 5 parts.
RemapTable lip_remap_table(int granularity);

}  // namespace tfgu
