#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "oracles.hpp"
#include "tfgu/losses.hpp"

using namespace tfgu;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

// Scalar loss of the logits, evaluated either on a fresh tape or through
// autograd for the analytic gradient.
using LossFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

double value_at(const LossFn& f, const Matrix& x) {
  ad::Tape t;
  return f(t, t.variable(x)).scalar();
}

Matrix grad_at(const LossFn& f, const Matrix& x) {
  ad::Tape t;
  ad::Var v = t.variable(x);
  t.backward(f(t, v));
  return v.grad();
}

double check(const LossFn& f, const Matrix& x) {
  const Matrix fd = oracle::fd_gradient([&](const Matrix& m) { return value_at(f, m); }, x);
  return oracle::rel_error(grad_at(f, x), fd);
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
  const std::vector<int> labels = {0, 1, 2, 3};
  CHECK(loss::cross_entropy(Matrix::Constant(4, 4, 0.25), labels) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Matrix onehot = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) onehot(i, i) = 1.0;
  CHECK(loss::cross_entropy(onehot, labels) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));

  Matrix half(2, 2);
  half << 1.0, 0.0, 0.5, 0.5;
  const std::vector<int> l2 = {0, 0};
  CHECK(loss::cross_entropy(half, l2) == doctest::Approx(std::log(2.0) / 2).epsilon(1e-6));
}

TEST_CASE("cross entropy skips ignored pixels and rejects all-ignored input") {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.9, 0.1;
  const std::vector<int> l = {0, kIgnoreLabel};
  CHECK(loss::cross_entropy(p, l) == doctest::Approx(std::log(2.0)));
  const std::vector<int> none = {kIgnoreLabel, kIgnoreLabel};
  CHECK_THROWS_AS(loss::cross_entropy(p, none), Error);
}

TEST_CASE("label shuffling") {
  const std::vector<int> labels = {0, 1, 1, 0, kIgnoreLabel, 1};
  const std::vector<int> identity = {0, 1};
  CHECK(loss::permute_labels(labels, identity) == labels);
  const std::vector<int> swap = {1, 0};
  CHECK(loss::permute_labels(labels, swap) == std::vector<int>{1, 0, 0, 1, kIgnoreLabel, 0});

  Rng rng(3);
  CHECK_THROWS_AS(loss::draw_permutation(1, rng), ShapeError);

  // relabeling preserves the histogram up to the permutation
  std::vector<int> many;
  for (int i = 0; i < 200; ++i) many.push_back(static_cast<int>(rng.below(5)));
  Rng r2(11);
  const auto perm = loss::draw_permutation(5, r2);
  const auto shuffled = loss::permute_labels(many, perm);
  std::map<int, int> before, after;
  for (int v : many) ++before[v];
  for (int v : shuffled) ++after[v];
  for (const auto& [k, n] : before) CHECK(after[perm[k]] == n);
}

TEST_CASE("peer loss closed forms") {
  Rng rng(5);
  Matrix p = random_matrix(6, 3, rng).array().exp();
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
  const std::vector<int> l = {0, 1, 2, 2, 1, 0};
  const std::vector<int> s = {1, 2, 0, 0, 2, 1};
  CHECK(loss::peer(p, l, s, 0.0) == loss::cross_entropy(p, l));
  CHECK(loss::peer(p, l, l, 0.25) == doctest::Approx(0.75 * loss::cross_entropy(p, l)).epsilon(1e-12));

  const std::vector<int> l2 = {0, 1}, s2 = {1, 0};
  CHECK(loss::peer(Matrix::Constant(2, 2, 0.5), l2, s2, 0.1) == doctest::Approx(0.9 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("uncertainty loss closed forms") {
  Matrix onehot = Matrix::Zero(3, 3);
  onehot(0, 0) = onehot(1, 2) = onehot(2, 1) = 1.0;
  CHECK(loss::uncertainty(onehot) == doctest::Approx(0.0));
  CHECK(loss::uncertainty(Matrix::Constant(3, 3, 1.0 / 3)) == doctest::Approx(1.0));
  Matrix half(2, 2);
  half << 1.0, 0.0, 0.5, 0.5;
  CHECK(loss::uncertainty(half) == doctest::Approx(0.5));
  CHECK_THROWS_AS(loss::uncertainty(Matrix::Ones(3, 1)), ShapeError);
}

TEST_CASE("diversity loss closed forms") {
  CHECK(loss::diversity(Matrix::Zero(3, 4)) == doctest::Approx(1.0));
  // c·c = √d with d = 4
  Matrix c = Matrix::Zero(1, 4);
  c(0, 0) = std::sqrt(2.0);
  CHECK(loss::diversity(c) == doctest::Approx(2.0));
  Matrix opposite = Matrix::Zero(2, 4);
  opposite(0, 0) = 1.0;
  opposite(1, 0) = -1.0;
  CHECK(loss::diversity(opposite) == doctest::Approx(1.0));
}

TEST_CASE("total loss arithmetic") {
  // peer 0, unc 0 (one-hot), diversity 1 (zero embeddings) with ω1 = 0
  ad::Tape t;
  Matrix p = Matrix::Zero(2, 2);
  p(0, 0) = p(1, 1) = 1.0;
  const std::vector<int> l = {0, 1};
  loss::LossWeights w;
  w.omega1 = 0.0;
  const auto terms = loss::total(t.constant(p), l, l, t.constant(Matrix::Zero(2, 4)), 1.0, w);
  CHECK(std::abs(terms.total.scalar()) < 1e-6);

  // uniform K=2: peer = ln 2 at α=0, diversity 1, uncertainty 1
  loss::LossWeights dflt;
  CHECK(dflt.omega1 == 1.0);
  CHECK(dflt.omega2 == 0.3);
  const auto u = loss::total(t.constant(Matrix::Constant(2, 2, 0.5)), l, l, t.constant(Matrix::Zero(2, 4)), 0.0, dflt);
  CHECK(u.peer.scalar() == doctest::Approx(std::log(2.0)));
  CHECK(u.total.scalar() == doctest::Approx(std::log(2.0) + 1.0 + 0.3));
}

TEST_CASE("alpha schedule ramps linearly") {
  loss::LossWeights w;
  CHECK(w.alpha_at(0, 20) == doctest::Approx(0.03));
  CHECK(w.alpha_at(19, 20) == doctest::Approx(0.1));
  CHECK(w.alpha_at(1, 3) == doctest::Approx(0.065));
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(17);
  const Matrix logits = random_matrix(2, 2, rng);
  const Matrix wide = random_matrix(5, 3, rng);
  const std::vector<int> l2 = {0, 1}, s2 = {1, 0};
  const std::vector<int> l5 = {0, 2, 1, kIgnoreLabel, 2}, s5 = {2, 1, 0, kIgnoreLabel, 1};

  const LossFn ce = [&](ad::Tape&, ad::Var x) { return loss::cross_entropy(ad::softmax_rows(x), l5); };
  const LossFn pr = [&](ad::Tape&, ad::Var x) { return loss::peer(ad::softmax_rows(x), l5, s5, 0.07); };
  const LossFn un = [&](ad::Tape&, ad::Var x) { return loss::uncertainty(ad::softmax_rows(x)); };
  const LossFn dv = [&](ad::Tape&, ad::Var x) { return loss::diversity(x); };
  CHECK(check(ce, wide) < 1e-4);
  CHECK(check(pr, wide) < 1e-4);
  CHECK(check(un, wide) < 1e-4);
  CHECK(check(dv, wide) < 1e-4);

  // total on a 2×2 toy, differentiating through both the logits and the
  // class embeddings
  const Matrix cls = random_matrix(2, 2, rng);
  const LossFn tot_logits = [&](ad::Tape& t, ad::Var x) {
    return loss::total(ad::softmax_rows(x), l2, s2, t.constant(cls), 0.05, {}).total;
  };
  const LossFn tot_cls = [&](ad::Tape& t, ad::Var c) {
    return loss::total(ad::softmax_rows(t.constant(logits)), l2, s2, c, 0.05, {}).total;
  };
  CHECK(check(tot_logits, logits) < 1e-4);
  CHECK(check(tot_cls, cls) < 1e-4);
}
