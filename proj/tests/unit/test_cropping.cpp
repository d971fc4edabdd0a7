#include <doctest.h>

#include <set>

#include "tfgu/cropping.hpp"
#include "tfgu/rng.hpp"

using namespace tfgu;

namespace {

LabelGrid binary(std::initializer_list<std::initializer_list<int>> rows) {
  LabelGrid g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  int i = 0;
  for (const auto& r : rows) {
    int j = 0;
    for (int v : r) g(i, j++) = v;
    ++i;
  }
  return g;
}

// Enumerates window origins for one β independently of the implementation.
std::set<std::pair<int, int>> expected_origins(int h, int w, double beta) {
  const int side = static_cast<int>(std::lround(beta * std::min(h, w)));
  const int stride = std::max(1, static_cast<int>(std::lround(0.5 * beta * std::min(h, w))));
  std::set<int> xs, ys;
  for (int x = 0; x + side <= w; x += stride) xs.insert(x);
  for (int y = 0; y + side <= h; y += stride) ys.insert(y);
  xs.insert(w - side);
  ys.insert(h - side);
  std::set<std::pair<int, int>> out;
  for (int y : ys)
    for (int x : xs) out.insert({x, y});
  return out;
}

}  // namespace

TEST_CASE("binarize attention") {
  CHECK(binarize_attention(Grid::Constant(3, 3, 0.2)).mask.isZero());
  Grid a(2, 2);
  a << 0, 0, 0, 4;
  CHECK(binarize_attention(a).mask == binary({{0, 0}, {0, 1}}));
  a << 1, 2, 3, 4;
  CHECK(binarize_attention(a).mask == binary({{0, 0}, {1, 1}}));
}

TEST_CASE("binarize attention is invariant under positive affine maps") {
  // dyadic grid values and affine coefficients keep every step exact
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Grid a(6, 7);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = static_cast<double>(rng.below(64)) / 16.0;
    const double s = static_cast<double>(1 + rng.below(8)) / 4.0;
    const double t = static_cast<double>(rng.below(32)) / 8.0 - 2.0;
    const Grid b = (s * a.array() + t).matrix();
    CHECK(binarize_attention(a).mask == binarize_attention(b).mask);
  }
}

TEST_CASE("window generation") {
  const auto w = generate_windows(64, 64, {0.5});
  CHECK(w.size() == 9);
  std::set<std::pair<int, int>> got;
  for (const auto& r : w) {
    CHECK(r.side == 32);
    got.insert({r.x, r.y});
  }
  CHECK(got == expected_origins(64, 64, 0.5));

  CHECK(generate_windows(64, 64, {0.5, 0.25}).size() == 58);
  const auto wide = generate_windows(32, 64, {1.0});
  REQUIRE(wide.size() == 3);
  CHECK(wide[0].y == 0);
  CHECK(wide[2].x == 32);

  // default multi-scale betas
  std::size_t total = 0;
  for (double b : {0.5, 0.4, 0.3, 0.2}) total += expected_origins(64, 64, b).size();
  CHECK(generate_windows(64, 64, {0.5, 0.4, 0.3, 0.2}).size() == total);
}

TEST_CASE("windows stay inside the image") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 8 + static_cast<int>(rng.below(60)), w = 8 + static_cast<int>(rng.below(60));
    const double beta = rng.uniform(0.1, 1.0);
    for (const auto& r : generate_windows(h, w, {beta}, "img")) {
      CHECK(r.x >= 0);
      CHECK(r.y >= 0);
      CHECK(r.x + r.side <= w);
      CHECK(r.y + r.side <= h);
      CHECK(r.side == std::lround(beta * std::min(h, w)));
      CHECK(r.image_id == "img");
    }
  }
  CHECK_THROWS_AS(generate_windows(64, 64, {1.5}), ConfigError);
  CHECK_THROWS_AS(generate_windows(64, 64, {0.0}), ConfigError);
}

TEST_CASE("patch classification") {
  // 10×10 prior on a 10×10 image
  ForegroundPrior p{LabelGrid::Zero(10, 10)};
  p.mask.block(0, 0, 10, 5).setOnes();
  CHECK(classify_patch({0, 0, 4, 0.4, ""}, p, 10, 10) == CropGroup::foreground);
  // 20-px window with 3 fg columns: 85% background
  ForegroundPrior q{LabelGrid::Zero(20, 20)};
  q.mask.block(0, 0, 20, 3).setOnes();
  CHECK(classify_patch({0, 0, 20, 1.0, ""}, q, 20, 20) == CropGroup::background);
  // 40% fg
  ForegroundPrior r{LabelGrid::Zero(10, 10)};
  r.mask.block(0, 0, 10, 4).setOnes();
  CHECK(classify_patch({0, 0, 10, 1.0, ""}, r, 10, 10) == CropGroup::neutral);
}

TEST_CASE("crop resize") {
  Rng rng(2);
  Image img(16, 16);
  for (auto& c : img.channels)
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = rng.uniform();
  const Image same = crop_resize(img, {0, 0, 16, 1.0, ""}, 16);
  for (int k = 0; k < 3; ++k) CHECK(same.channels[k] == img.channels[k]);

  const Image flat = crop_resize(Image(16, 16, 0.3), {2, 3, 10, 0.6, ""}, 7);
  for (int k = 0; k < 3; ++k) CHECK((flat.channels[k].array() - 0.3).abs().maxCoeff() < 1e-15);

  Image board(16, 16);
  for (auto& c : board.channels)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) c(i, j) = ((i + j) % 2) ? 0.9 : 0.1;
  const Image half = crop_resize(board, {0, 0, 16, 1.0, ""}, 8);
  for (int k = 0; k < 3; ++k) {
    CHECK(half.channels[k].minCoeff() >= 0.1 - 1e-15);
    CHECK(half.channels[k].maxCoeff() <= 0.9 + 1e-15);
  }
  CHECK(crop_resize(img, {0, 0, 8, 0.5, ""}).height() == 8);
}
