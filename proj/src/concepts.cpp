#include "tfgu/concepts.hpp"

#include <cmath>
#include <limits>

#include "tfgu/rng.hpp"

namespace tfgu {

namespace {

int nearest(const Matrix& centers, const Eigen::RowVectorXd& p, double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

Matrix plus_plus_init(const Matrix& points, int k, Rng& rng) {
  const auto n = points.rows();
  Matrix centers(k, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(n)));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (points.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(n));
    }
    centers.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - centers.row(c)).squaredNorm());
  }
  return centers;
}

// Single-point transfers after Lloyd converges: move a point when the exact change in
// inertia, n_a/(n_a-1)·|x-c_a|² against n_b/(n_b+1)·|x-c_b|², is negative.
void hartigan(const Matrix& points, KMeansResult& r) {
  const auto n = points.rows();
  const int k = static_cast<int>(r.centers.rows());
  std::vector<Eigen::Index> counts(k, 0);
  for (int a : r.assignments) ++counts[a];
  bool moved = true;
  for (int pass = 0; moved && pass < 100; ++pass) {
    moved = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = r.assignments[i];
      if (counts[a] < 2) continue;
      const double na = static_cast<double>(counts[a]);
      const double gain = na / (na - 1.0) * (points.row(i) - r.centers.row(a)).squaredNorm();
      int best = -1;
      double best_cost = gain;
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double cost = nb / (nb + 1.0) * (points.row(i) - r.centers.row(b)).squaredNorm();
        if (cost < best_cost * (1.0 - 1e-12)) {
          best_cost = cost;
          best = b;
        }
      }
      if (best < 0) continue;
      r.centers.row(a) = (r.centers.row(a) * na - points.row(i)) / (na - 1.0);
      const double nb = static_cast<double>(counts[best]);
      r.centers.row(best) = (r.centers.row(best) * nb + points.row(i)) / (nb + 1.0);
      --counts[a];
      ++counts[best];
      r.assignments[i] = best;
      moved = true;
    }
  }
  // recompute centres exactly from the final partition
  Matrix c = Matrix::Zero(k, points.cols());
  for (Eigen::Index i = 0; i < n; ++i) c.row(r.assignments[i]) += points.row(i);
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0) r.centers.row(j) = c.row(j) / static_cast<double>(counts[j]);
  }
}

KMeansResult lloyd(const Matrix& points, int k, Rng& rng, const KMeansOptions& opts) {
  const auto n = points.rows();
  KMeansResult r;
  r.centers = plus_plus_init(points, k, rng);
  r.assignments.assign(n, 0);
  std::vector<double> dist(n);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      r.assignments[i] = nearest(r.centers, points.row(i), &dist[i]);
      total += dist[i];
    }
    r.history.push_back(total);

    std::vector<int> counts(k, 0);
    for (int a : r.assignments) ++counts[a];
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // re-seed with the point farthest from its centre, from a cluster that can spare it
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[r.assignments[i]] < 2) continue;
        if (far < 0 || dist[i] > dist[far]) far = i;
      }
      if (far < 0) break;
      --counts[r.assignments[far]];
      r.assignments[far] = c;
      counts[c] = 1;
      dist[far] = 0.0;
    }

    Matrix updated = Matrix::Zero(k, points.cols());
    for (Eigen::Index i = 0; i < n; ++i) updated.row(r.assignments[i]) += points.row(i);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        updated.row(c) /= static_cast<double>(counts[c]);
      } else {
        updated.row(c) = r.centers.row(c);
      }
    }
    const double shift = (updated - r.centers).squaredNorm();
    r.centers = std::move(updated);
    if (shift <= opts.tol) break;
  }

  for (Eigen::Index i = 0; i < n; ++i) r.assignments[i] = nearest(r.centers, points.row(i), &dist[i]);
  hartigan(points, r);
  r.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) r.inertia += (points.row(i) - r.centers.row(r.assignments[i])).squaredNorm();
  return r;
}

}  // namespace

double inertia(const Matrix& points, const Matrix& centers, const std::vector<int>& assignments) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) total += (points.row(i) - centers.row(assignments[i])).squaredNorm();
  return total;
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, const KMeansOptions& opts) {
  if (k < 1) throw ConfigError("k-means needs k >= 1");
  if (points.rows() < k) {
    throw ShapeError("k-means needs at least k points (got " + std::to_string(points.rows()) + ", k = " +
                     std::to_string(k) + ")");
  }
  KMeansResult best;
  bool have = false;
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(restart)));
    KMeansResult r = lloyd(points, k, rng, opts);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      best.winning_restart = restart;
      have = true;
    }
  }
  return best;
}

void ConceptBank::add_to(WeightArchive& archive) const {
  archive.add("concepts.vectors", vectors);
  std::vector<double> r;
  for (auto role : roles) r.push_back(static_cast<double>(role));
  archive.add("concepts.roles", {static_cast<std::int64_t>(r.size())}, r);
  // 16-bit words, each exact in f32
  std::vector<double> seed_words;
  for (int i = 0; i < 4; ++i) seed_words.push_back(static_cast<double>((kmeans_seed >> (16 * i)) & 0xffff));
  archive.add("concepts.kmeans_seed", {4}, seed_words);
}

ConceptBank ConceptBank::from_archive(const WeightArchive& archive) {
  ConceptBank b;
  b.vectors = archive.at("concepts.vectors").as_matrix();
  for (double v : archive.at("concepts.roles").values) {
    const int role = static_cast<int>(v);
    if (role < 0 || role > 2) throw FormatError("bad concept role value");
    b.roles.push_back(static_cast<ConceptRole>(role));
  }
  if (static_cast<Eigen::Index>(b.roles.size()) != b.vectors.rows()) {
    throw FormatError("concept roles do not match concept count");
  }
  if (const Tensor* t = archive.find("concepts.kmeans_seed")) {
    if (t->values.size() != 4) throw FormatError("bad concepts.kmeans_seed tensor");
    for (int i = 0; i < 4; ++i) b.kmeans_seed |= static_cast<std::uint64_t>(t->values[i]) << (16 * i);
  }
  return b;
}

std::pair<int, int> proportional_split(int k, Eigen::Index n_fg, Eigen::Index n_bg) {
  if (n_fg + n_bg == 0) return {k, 0};
  if (n_bg == 0) return {k, 0};
  if (n_fg == 0) return {0, k};
  int k_fg = static_cast<int>(std::lround(static_cast<double>(k) * n_fg / static_cast<double>(n_fg + n_bg)));
  if (k >= 2) k_fg = std::clamp(k_fg, 1, k - 1);
  return {k_fg, k - k_fg};
}

ConceptBank discover(const GroupedFeatures& features, int k_fg, int k_bg, std::uint64_t seed,
                     bool single_group, const KMeansOptions& opts) {
  if (k_fg < 0 || k_bg < 0 || k_fg + k_bg < 1) throw ConfigError("concept count must be positive");
  if (k_fg > 0 && features.foreground.rows() == 0) {
    throw ShapeError(std::string(single_group ? "feature" : "foreground") + " group is empty but k = " +
                     std::to_string(k_fg));
  }
  if (k_bg > 0 && features.background.rows() == 0) {
    throw ShapeError("background group is empty but k = " + std::to_string(k_bg));
  }
  ConceptBank bank;
  bank.kmeans_seed = seed;
  const Eigen::Index d = k_fg > 0 ? features.foreground.cols() : features.background.cols();
  bank.vectors.resize(k_fg + k_bg, d);
  if (k_fg > 0) {
    bank.vectors.topRows(k_fg) = kmeans(features.foreground, k_fg, derive_seed(seed, 1), opts).centers;
    bank.roles.assign(k_fg, single_group ? ConceptRole::any : ConceptRole::fg);
  }
  if (k_bg > 0) {
    bank.vectors.bottomRows(k_bg) = kmeans(features.background, k_bg, derive_seed(seed, 2), opts).centers;
    bank.roles.insert(bank.roles.end(), k_bg, ConceptRole::bg);
  }
  return bank;
}

}  // namespace tfgu
