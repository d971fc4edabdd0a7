#pragma once

#include <cstdint>
#include <vector>

#include "tfgu/archive.hpp"
#include "tfgu/common.hpp"

namespace tfgu {

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;  // stop when the summed squared centre shift drops to this
  int restarts = 10;
};

struct KMeansResult {
  Matrix centers;                // K×d
  std::vector<int> assignments;  // per point; nearest centre, ties to lowest index
  double inertia = 0.0;
  /// Inertia after each assignment step of the winning restart.
  std::vector<double> history;
  int winning_restart = 0;
};

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` runs by
/// (inertia, restart index). Empty clusters are re-seeded with the point
/// farthest from its assigned centre. Points are rows.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, const KMeansOptions& opts = {});

/// Sum of squared distances to the assigned centres.
double inertia(const Matrix& points, const Matrix& centers, const std::vector<int>& assignments);

enum class ConceptRole : int { fg = 0, bg = 1, any = 2 };

struct ConceptBank {
  Matrix vectors;  // K×d
  std::vector<ConceptRole> roles;
  std::uint64_t kmeans_seed = 0;

  int k() const { return static_cast<int>(vectors.rows()); }
  void add_to(WeightArchive& archive) const;
  static ConceptBank from_archive(const WeightArchive& archive);
};

/// Crop class features split by foreground prior. In single-group mode
/// everything goes into `foreground` and roles become `any`.
struct GroupedFeatures {
  Matrix foreground;  // rows are features
  Matrix background;
};

/// Splits K proportionally to the group sizes, keeping at least one concept
/// per non-empty group when K allows.
std::pair<int, int> proportional_split(int k, Eigen::Index n_fg, Eigen::Index n_bg);

/// Separate k-means per group; foreground centres first, then background.
/// `single_group` tags every concept as `any`.
ConceptBank discover(const GroupedFeatures& features, int k_fg, int k_bg, std::uint64_t seed,
                     bool single_group = false, const KMeansOptions& opts = {});

}  // namespace tfgu
