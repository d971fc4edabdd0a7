#include "tfgu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace tfgu {

void ConfusionMatrix::add(const LabelGrid& pred, const LabelGrid& gt, int ignore) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ShapeError("prediction and ground truth differ in size");
  const auto k_pred = counts.rows(), k_gt = counts.cols();
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const int g = gt(i);
    if (g == ignore) continue;
    const int p = pred(i);
    if (p < 0 || p >= k_pred) throw ShapeError("predicted label " + std::to_string(p) + " out of range");
    if (g < 0 || g >= k_gt) throw ShapeError("ground-truth label " + std::to_string(g) + " out of range");
    ++counts(p, g);
    ++total;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.counts.rows() != counts.rows() || other.counts.cols() != counts.cols()) {
    throw ShapeError("cannot merge confusion matrices of different shape");
  }
  counts += other.counts;
  total += other.total;
}

ConfusionMatrix accumulate(std::span<const LabelGrid> pred, std::span<const LabelGrid> gt, int k_pred, int k_gt,
                           int ignore) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground-truth counts differ");
  ConfusionMatrix c(k_pred, k_gt);
  for (std::size_t i = 0; i < pred.size(); ++i) c.add(pred[i], gt[i], ignore);
  return c;
}

Assignment hungarian_match(const CountMatrix& counts) {
  if (counts.size() == 0) throw ShapeError("hungarian_match: empty matrix");
  // rows ≤ columns for the solver; transpose otherwise
  const bool transposed = counts.rows() > counts.cols();
  const CountMatrix c = transposed ? CountMatrix(counts.transpose()) : counts;
  const int n = static_cast<int>(c.rows()), m = static_cast<int>(c.cols());
  constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;

  // Ties in matched pixels are broken by the summed pair IoU, quantized to 2^-20 so the
  // combined weight stays an exact integer. Pair IoU does not depend on label indices,
  // which keeps the chosen matching stable when predicted clusters are renumbered.
  constexpr std::int64_t quantum = std::int64_t{1} << 20;
  const std::int64_t scale = quantum * (std::min(n, m) + 1);
  const std::int64_t total = c.sum();
  const bool tie_break = total < inf / (4 * scale);
  CountMatrix w(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!tie_break) {
        w(i, j) = c(i, j);
        continue;
      }
      const std::int64_t uni = c.row(i).sum() + c.col(j).sum() - c(i, j);
      const std::int64_t q =
          uni > 0 ? std::llround(static_cast<double>(quantum) * static_cast<double>(c(i, j)) / static_cast<double>(uni))
                  : 0;
      w(i, j) = c(i, j) * scale + q;
    }
  }

  // minimize −w; 1-based arrays with column 0 as the virtual start
  std::vector<std::int64_t> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<std::int64_t> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      std::int64_t delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.pred_to_gt.assign(counts.rows(), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int row = p[j] - 1, col = j - 1;
    if (transposed) {
      a.pred_to_gt[col] = row;
    } else {
      a.pred_to_gt[row] = col;
    }
    a.matched += c(row, col);
  }
  return a;
}

EvalReport metrics(const ConfusionMatrix& confusion, const Assignment& assignment) {
  const CountMatrix& c = confusion.counts;
  const auto k_pred = c.rows(), k_gt = c.cols();
  if (static_cast<Eigen::Index>(assignment.pred_to_gt.size()) != k_pred) throw ShapeError("assignment size mismatch");
  EvalReport r;
  r.assignment = assignment;
  r.total = confusion.total;
  r.per_class_iou.assign(k_gt, 0.0);
  r.zero_denominator.assign(k_gt, false);
  std::vector<int> gt_to_pred(k_gt, -1);
  for (Eigen::Index p = 0; p < k_pred; ++p) {
    const int g = assignment.pred_to_gt[p];
    if (g < 0) continue;
    if (g >= k_gt || gt_to_pred[g] >= 0) throw ShapeError("assignment is not one-to-one");
    gt_to_pred[g] = static_cast<int>(p);
  }
  std::int64_t correct = 0;
  for (Eigen::Index g = 0; g < k_gt; ++g) {
    const std::int64_t gt_pixels = c.col(g).sum();
    const int p = gt_to_pred[g];
    std::int64_t tp = 0, fp = 0;
    if (p >= 0) {
      tp = c(p, g);
      fp = c.row(p).sum() - tp;
    }
    const std::int64_t fn = gt_pixels - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.zero_denominator[g] = true;
    } else {
      r.per_class_iou[g] = static_cast<double>(tp) / static_cast<double>(denom);
    }
    correct += tp;
  }
  double sum = 0.0;
  for (double v : r.per_class_iou) sum += v;
  r.miou = k_gt > 0 ? sum / static_cast<double>(k_gt) : 0.0;
  r.pixel_acc = confusion.total > 0 ? static_cast<double>(correct) / static_cast<double>(confusion.total) : 0.0;
  return r;
}

EvalReport evaluate(const ConfusionMatrix& confusion) {
  return metrics(confusion, hungarian_match(confusion.counts));
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["miou"] = miou;
  j["pixel_acc"] = pixel_acc;
  j["per_class_iou"] = per_class_iou;
  j["zero_denominator"] = zero_denominator;
  j["assignment"] = assignment.pred_to_gt;
  j["matched_pixels"] = assignment.matched;
  j["total_pixels"] = total;
  return j.dump(2);
}

LabelGrid remap_labels(const LabelGrid& grid, const RemapTable& table, int ignore) {
  LabelGrid out(grid.rows(), grid.cols());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const int v = grid(i);
    if (v == ignore) {
      out(i) = v;
      continue;
    }
    auto it = table.find(v);
    if (it == table.end()) throw ConfigError("label value " + std::to_string(v) + " has no remap entry");
    out(i) = it->second;
  }
  return out;
}

RemapTable load_remap_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open remap table " + path.string());
  RemapTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, '\t') || !std::getline(ls, b)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected old<TAB>new");
    }
    try {
      t[std::stoi(a)] = std::stoi(b);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-integer label");
    }
  }
  return t;
}

void save_remap_table(const RemapTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& [a, b] : table) out << a << '\t' << b << '\n';
}

RemapTable lip_remap_table(int granularity) {
  // index = LIP label (0 background, 1..19 parts)
  static const int to16[20] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 14, 15, 15, 16, 16};
  static const int to5[20] = {0, 1, 1, 3, 1, 2, 2, 2, 5, 4, 2, 2, 2, 1, 3, 3, 4, 4, 5, 5};
  const int* src = nullptr;
  if (granularity == 19) {
    RemapTable t;
    for (int i = 0; i < 20; ++i) t[i] = i;
    return t;
  }
  if (granularity == 16) src = to16;
  if (granularity == 5) src = to5;
  if (!src) throw ConfigError("LIP granularity must be 19, 16 or 5");
  RemapTable t;
  for (int i = 0; i < 20; ++i) t[i] = src[i];
  return t;
}

}  // namespace tfgu
