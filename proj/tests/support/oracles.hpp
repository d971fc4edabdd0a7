#pragma once

// Independent reference computations shared by the unit and acceptance
// suites. Nothing here calls into the code under test beyond plain types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "tfgu/common.hpp"
#include "tfgu/evaluation.hpp"

namespace tfgu::oracle {

/// Central finite differences of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step = 1e-4) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe(i);
    probe(i) = orig + step;
    const double up = f(probe);
    probe(i) = orig - step;
    const double down = f(probe);
    probe(i) = orig;
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

/// max|a − b| relative to max|b|.
inline double rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-12);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Best matched total over every injective map from the smaller side.
inline std::int64_t brute_force_match(const CountMatrix& c) {
  const bool rows_small = c.rows() <= c.cols();
  const int small = static_cast<int>(rows_small ? c.rows() : c.cols());
  const int large = static_cast<int>(rows_small ? c.cols() : c.rows());
  std::vector<int> cols(large);
  std::iota(cols.begin(), cols.end(), 0);
  std::int64_t best = std::numeric_limits<std::int64_t>::min();
  // permutations of the large side; the first `small` entries are the image
  do {
    std::int64_t s = 0;
    for (int i = 0; i < small; ++i) s += rows_small ? c(i, cols[i]) : c(cols[i], i);
    best = std::max(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Minimum k-means objective for K = 2 over all labelings with both
/// clusters non-empty.
inline double exhaustive_two_means(const Matrix& pts) {
  const auto n = pts.rows();
  double best = std::numeric_limits<double>::infinity();
  for (long mask = 1; mask < (1L << n) - 1; ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      RowVector mean = RowVector::Zero(pts.cols());
      int cnt = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (((mask >> i) & 1) == side) {
          mean += pts.row(i);
          ++cnt;
        }
      }
      mean /= cnt;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (((mask >> i) & 1) == side) total += (pts.row(i) - mean).squaredNorm();
      }
    }
    best = std::min(best, total);
  }
  return best;
}

}  // namespace tfgu::oracle
