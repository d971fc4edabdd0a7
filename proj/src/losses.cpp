#include "tfgu/losses.hpp"

#include <cmath>
#include <numeric>

namespace tfgu::loss {

ad::Var cross_entropy(ad::Var probs, std::span<const int> labels) {
  const auto n = probs.rows();
  const auto k = probs.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("cross_entropy: label count mismatch");
  std::vector<int> index(n, 0);
  Matrix mask = Matrix::Zero(n, 1);
  double count = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || labels[i] >= k) throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    index[i] = labels[i];
    mask(i, 0) = 1.0;
    count += 1.0;
  }
  if (count == 0.0) throw Error("cross_entropy: every label is ignored");
  ad::Tape& t = *probs.tape();
  ad::Var logp = ad::log(ad::clamp(ad::pick(probs, index), kProbClip, 1.0 - kProbClip));
  return ad::scale(ad::sum(ad::hadamard(logp, t.constant(std::move(mask)))), -1.0 / count);
}

ad::Var peer(ad::Var probs, std::span<const int> labels, std::span<const int> shuffled, double alpha) {
  ad::Var ce = cross_entropy(probs, labels);
  if (alpha == 0.0) return ce;
  return ad::sub(ce, ad::scale(cross_entropy(probs, shuffled), alpha));
}

ad::Var uncertainty(ad::Var probs) {
  if (probs.cols() < 2) throw ShapeError("uncertainty loss needs at least two classes");
  return ad::add_scalar(ad::scale(ad::mean(ad::top2_gap_rows(probs)), -1.0), 1.0);
}

ad::Var diversity(ad::Var classes) {
  const double k = static_cast<double>(classes.rows());
  const double d = static_cast<double>(classes.cols());
  ad::Var gram = ad::matmul_bt(classes, classes);
  return ad::add_scalar(ad::scale(ad::sum(gram), 1.0 / (k * k * std::sqrt(d))), 1.0);
}

double LossWeights::alpha_at(int epoch, int epochs) const {
  if (epochs <= 1) return alpha_start;
  return alpha_start + (alpha_end - alpha_start) * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
}

LossTerms total(ad::Var probs, std::span<const int> labels, std::span<const int> shuffled, ad::Var classes,
                double alpha, const LossWeights& w) {
  LossTerms t;
  t.peer = peer(probs, labels, shuffled, alpha);
  t.diversity = diversity(classes);
  t.uncertainty = uncertainty(probs);
  t.total = ad::add(ad::add(t.peer, ad::scale(t.diversity, w.omega1)), ad::scale(t.uncertainty, w.omega2));
  return t;
}

std::vector<int> draw_permutation(int k, Rng& rng) {
  if (k < 2) throw ShapeError("label shuffling needs at least two classes");
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  return perm;
}

std::vector<int> permute_labels(std::span<const int> labels, std::span<const int> perm) {
  std::vector<int> out(labels.begin(), labels.end());
  for (int& v : out) {
    if (v == kIgnoreLabel) continue;
    if (v < 0 || v >= static_cast<int>(perm.size())) throw ShapeError("label outside permutation range");
    v = perm[v];
  }
  return out;
}

std::vector<int> shuffle_labels(std::span<const int> labels, int k, std::uint64_t seed) {
  Rng rng(seed);
  const auto perm = draw_permutation(k, rng);
  return permute_labels(labels, perm);
}

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
  ad::Tape t;
  return cross_entropy(t.constant(probs), labels).scalar();
}

double peer(const Matrix& probs, std::span<const int> labels, std::span<const int> shuffled, double alpha) {
  ad::Tape t;
  return peer(t.constant(probs), labels, shuffled, alpha).scalar();
}

double uncertainty(const Matrix& probs) {
  ad::Tape t;
  return uncertainty(t.constant(probs)).scalar();
}

double diversity(const Matrix& classes) {
  ad::Tape t;
  return diversity(t.constant(classes)).scalar();
}

}  // namespace tfgu::loss
