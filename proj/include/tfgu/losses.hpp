#pragma once

#include <span>
#include <vector>

#include "tfgu/autograd.hpp"
#include "tfgu/rng.hpp"

namespace tfgu::loss {

// Probabilities are n×K matrices (one row per location); labels are per-row
// class indices with kIgnoreLabel skipped.

/// Probabilities are clipped into [kProbClip, 1 − kProbClip] before the log.
inline constexpr double kProbClip = 1e-7;

/// Mean −log p(label) over non-ignored rows.
ad::Var cross_entropy(ad::Var probs, std::span<const int> labels);
/// CE(P, M̂) − α·CE(P, M̂′).
ad::Var peer(ad::Var probs, std::span<const int> labels, std::span<const int> shuffled, double alpha);
/// 1 − mean over rows of (largest − second largest).
ad::Var uncertainty(ad::Var probs);
/// 1 + Σ(C·Cᵀ)/(K²·√d) over all K² Gram entries.
ad::Var diversity(ad::Var classes);

struct LossWeights {
  double omega1 = 1.0;  // diversity
  double omega2 = 0.3;  // uncertainty
  double alpha_start = 0.03;
  double alpha_end = 0.1;

  /// Linear ramp from alpha_start (first epoch) to alpha_end (last epoch).
  double alpha_at(int epoch, int epochs) const;
};

struct LossTerms {
  ad::Var total, peer, diversity, uncertainty;
};

/// L_peer + ω1·L_div + ω2·L_unc.
LossTerms total(ad::Var probs, std::span<const int> labels, std::span<const int> shuffled, ad::Var classes,
                double alpha, const LossWeights& w);

/// A uniformly drawn permutation of {0..K−1}; K must be at least 2.
std::vector<int> draw_permutation(int k, Rng& rng);
/// Applies π to every non-ignored label.
std::vector<int> permute_labels(std::span<const int> labels, std::span<const int> perm);
/// Draws π from `seed` and applies it.
std::vector<int> shuffle_labels(std::span<const int> labels, int k, std::uint64_t seed);

// Value-only conveniences.
double cross_entropy(const Matrix& probs, std::span<const int> labels);
double peer(const Matrix& probs, std::span<const int> labels, std::span<const int> shuffled, double alpha);
double uncertainty(const Matrix& probs);
double diversity(const Matrix& classes);

}  // namespace tfgu::loss
