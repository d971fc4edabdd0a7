#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tfgu/encoder.hpp"

using namespace tfgu;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& c : img.channels)
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = rng.uniform();
  return img;
}

EncoderConfig small_config(std::uint64_t seed = 7) {
  EncoderConfig c;
  c.depth = 2;
  c.embed_dim = 16;
  c.attn_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.image_size = 16;
  c.seed = seed;
  return c;
}

// 1/√x for a 1×1 value.
ad::Var inv_sqrt(ad::Var x) {
  const double v = x.scalar();
  Matrix out(1, 1);
  out(0, 0) = 1.0 / std::sqrt(v);
  ad::Var parents[] = {x};
  const int id = x.id();
  return x.tape()->push(out, parents, [id, v](ad::Tape& t, const Matrix& g) {
    Matrix d(1, 1);
    d(0, 0) = g(0, 0) * -0.5 * std::pow(v, -1.5);
    t.accumulate(id, d);
  });
}

// cos(x_cls, v)
EncoderObjective cosine_objective(const Vector& v) {
  return [v](ad::Tape& tape, const EncoderTrace& tr) {
    ad::Var s = tape.constant(v);
    ad::Var dot = ad::matmul(tr.cls, s);
    ad::Var norm2 = ad::matmul_bt(tr.cls, tr.cls);
    return ad::scale(ad::hadamard(dot, inv_sqrt(norm2)), 1.0 / v.norm());
  };
}

}  // namespace

TEST_CASE("encoder config invariants") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("seeded init is deterministic and survives an archive round-trip") {
  EncoderConfig c;
  c.seed = 7;
  const EncoderModel a = EncoderModel::load(c);
  const EncoderModel b = EncoderModel::load(c);
  CHECK(a.params() == b.params());
  const WeightArchive arch = WeightArchive::from_bytes(a.to_archive().to_bytes());
  const EncoderModel r = EncoderModel::load(c, &arch);
  CHECK(r.params() == a.params());
  c.seed = 8;
  CHECK_FALSE(EncoderModel::load(c).params() == a.params());
}

TEST_CASE("archive shape mismatch names the tensor") {
  EncoderConfig c;
  WeightArchive arch = EncoderModel::load(c).to_archive();
  WeightArchive bad;
  for (const Tensor& t : arch.tensors()) {
    if (t.name == "blocks.0.qkv") {
      bad.add(t.name, Matrix::Zero(384, 3 * 384));
    } else {
      bad.add(t.name, t.shape, t.values);
    }
  }
  try {
    EncoderModel::load(c, &bad);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("blocks.0.qkv") != std::string::npos);
  }
}

TEST_CASE("encode shapes and attention normalization") {
  EncoderConfig c;
  const EncoderModel m = EncoderModel::load(c);
  const Image img = random_image(32, 32, 1);
  const FeatureBundle f = m.encode(img);
  CHECK(f.grid_h == 8);
  CHECK(f.grid_w == 8);
  CHECK(f.patch.rows() == 64);
  CHECK(f.patch.cols() == c.embed_dim);
  CHECK(f.cls.size() == c.embed_dim);
  CHECK(f.cls_attention.minCoeff() >= 0.0);
  CHECK(std::abs(f.cls_attention.sum() + f.cls_self_attention - 1.0) < 1e-5);

  // non-native size resamples the positional table
  const FeatureBundle g = m.encode(random_image(64, 48, 2));
  CHECK(g.grid_h == 16);
  CHECK(g.grid_w == 12);
  CHECK(std::abs(g.cls_attention.sum() + g.cls_self_attention - 1.0) < 1e-5);

  CHECK_THROWS_AS(m.encode(random_image(30, 32, 3)), ShapeError);
}

TEST_CASE("identical images in a batch give identical bundles") {
  const EncoderModel m = EncoderModel::load(small_config());
  const Image img = random_image(16, 16, 5);
  const std::vector<Image> batch = {img, img};
  const auto out = m.encode(batch);
  CHECK(out[0].cls == out[1].cls);
  CHECK(out[0].patch == out[1].patch);
  CHECK(out[0].cls_attention == out[1].cls_attention);
}

TEST_CASE("attention gradient special cases") {
  const EncoderModel m = EncoderModel::load(small_config());
  const Image img = random_image(16, 16, 6);

  const AttentionGrad constant = m.attention_grad(img, [](ad::Tape& t, const EncoderTrace&) {
    return t.constant(Matrix::Constant(1, 1, 3.0));
  });
  CHECK_FALSE(constant.connected);
  CHECK(constant.grad.isZero(0.0));

  // Σ of the head-averaged map, which the perturbation shifts by delta
  const AttentionGrad ones = m.attention_grad(img, [](ad::Tape& t, const EncoderTrace& tr) {
    Matrix row(1, tr.grid_h * tr.grid_w);
    for (int i = 0; i < row.cols(); ++i) row(0, i) = tr.cls_attention(i / tr.grid_w, i % tr.grid_w);
    return ad::sum(ad::add(t.constant(row), tr.attention_delta));
  });
  CHECK(ones.connected);
  CHECK(ones.grad.isApprox(Grid::Ones(4, 4)));
}

TEST_CASE("cosine objective gradient matches central differences") {
  const EncoderModel m = EncoderModel::load(small_config());
  const Image img = random_image(16, 16, 9);
  Rng rng(10);
  Vector v(16);
  for (auto& x : v) x = rng.normal();
  const auto obj = cosine_objective(v);
  const AttentionGrad g = m.attention_grad(img, obj);
  REQUIRE(g.connected);
  const Matrix fd = oracle::fd_gradient([&](const Matrix& d) { return m.objective_at(img, d, obj); }, Grid::Zero(4, 4));
  CHECK(oracle::rel_error(g.grad, fd) < 1e-4);
}
