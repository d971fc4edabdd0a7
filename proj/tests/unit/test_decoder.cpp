#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "tfgu/decoder.hpp"
#include "tfgu/losses.hpp"
#include "tfgu/training.hpp"

using namespace tfgu;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

DecoderConfig toy_config() {
  DecoderConfig c;
  c.layers = 1;
  c.input_dim = 6;
  c.embed_dim = 4;
  c.heads = 2;
  c.mlp_dim = 8;
  c.classes = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("mask operation") {
  Matrix x = Matrix::Zero(1, 4);
  x(0, 0) = 1.0;
  Matrix c = randn(3, 4, 1);
  const Matrix logits = mask_op(x, c);
  CHECK(logits.row(0).transpose().isApprox(c.col(0) / 2.0));
  CHECK(mask_op(randn(5, 4, 2), Matrix::Zero(3, 4)).isZero(0.0));
  const Matrix y = randn(5, 4, 3);
  CHECK((mask_op(y, 2.5 * c) - 2.5 * mask_op(y, c)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(mask_op(y, Matrix::Zero(3, 5)), ShapeError);
}

TEST_CASE("decode contracts") {
  const DecoderModel m = DecoderModel::init(toy_config());
  const Matrix tokens = randn(12, 6, 7);
  const ProbabilityMaps p = m.decode(tokens, 3, 4, 12, 16);
  REQUIRE(p.patch_probs.size() == 3);
  Grid sum = Grid::Zero(3, 4);
  for (const Grid& g : p.patch_probs) sum += g;
  CHECK((sum.array() - 1.0).abs().maxCoeff() < 1e-5);
  Grid full = Grid::Zero(12, 16);
  for (const Grid& g : p.full_probs) full += g;
  CHECK((full.array() - 1.0).abs().maxCoeff() < 1e-5);

  const ProbabilityMaps q = m.decode(tokens, 3, 4, 12, 16);
  for (int k = 0; k < 3; ++k) CHECK(q.full_probs[k] == p.full_probs[k]);

  CHECK_THROWS_AS(m.decode(tokens, 4, 4), ShapeError);
  CHECK_THROWS_AS(m.decode(randn(12, 5, 1), 3, 4), ShapeError);
}

TEST_CASE("zero class embeddings and zero tokens give uniform output") {
  DecoderModel m = DecoderModel::init(toy_config());
  // with every parameter zeroed the class and patch streams are identical
  for (auto& [name, p] : m.params()) p.setZero();
  const Matrix probs = m.probabilities(randn(4, 6, 2));
  CHECK((probs.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("init is deterministic with the configured shape") {
  const DecoderModel a = DecoderModel::init(toy_config());
  const DecoderModel b = DecoderModel::init(toy_config());
  CHECK(a.params() == b.params());
  CHECK(a.class_embeddings().rows() == 3);
  CHECK(a.class_embeddings().cols() == 4);
  const DecoderModel r = DecoderModel::from_archive(toy_config(), WeightArchive::from_bytes(a.to_archive().to_bytes()));
  CHECK(r.params() == a.params());
}

TEST_CASE("one diversity step changes the class embeddings") {
  DecoderModel m = DecoderModel::init(toy_config());
  const Matrix before = m.class_embeddings();
  ad::Tape t;
  nn::Binding b(t, m.params(), true);
  t.backward(loss::diversity(b["cls_emb"]));
  const auto grads = b.gradients();
  CHECK_FALSE(grads.at("cls_emb").isZero(0.0));
  Adam adam(1e-2);
  adam.step(m.params(), grads);
  CHECK_FALSE(m.class_embeddings() == before);
}

TEST_CASE("decode is equivariant to permuting the class embeddings") {
  const DecoderModel m = DecoderModel::init(toy_config());
  const Matrix tokens = randn(10, 6, 8);
  const Matrix base = m.probabilities(tokens);
  std::vector<int> perm = {2, 0, 1};
  DecoderModel pm = m;
  const Matrix& c = m.class_embeddings();
  for (int k = 0; k < 3; ++k) pm.params()["cls_emb"].row(k) = c.row(perm[k]);
  const Matrix out = pm.probabilities(tokens);
  for (int k = 0; k < 3; ++k) CHECK((out.col(k) - base.col(perm[k])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("CE gradient with respect to class embeddings matches central differences") {
  const DecoderConfig cfg = toy_config();
  const DecoderModel m = DecoderModel::init(cfg);
  const Matrix tokens = randn(6, 6, 4);
  const std::vector<int> labels = {0, 2, 1, 1, 0, 2};
  auto value = [&](const Matrix& cls) {
    nn::ParamSet p = m.params();
    p["cls_emb"] = cls;
    ad::Tape t;
    nn::Binding b(t, p, false);
    return loss::cross_entropy(DecoderModel::forward(cfg, b, t.constant(tokens)), labels).scalar();
  };
  ad::Tape t;
  nn::Binding b(t, m.params(), true);
  t.backward(loss::cross_entropy(DecoderModel::forward(cfg, b, t.constant(tokens)), labels));
  const Matrix g = b.gradients().at("cls_emb");
  // steep fixture: truncation error at step 1e-4 is already 2e-4
  CHECK(oracle::rel_error(g, oracle::fd_gradient(value, m.class_embeddings(), 1e-6)) < 1e-4);
}

TEST_CASE("uniform teacher and stack reshaping") {
  const Stack u = uniform_probabilities(4, 2, 3);
  CHECK(u.size() == 4);
  CHECK(u[2](1, 2) == 0.25);
  Matrix p(6, 2);
  for (int i = 0; i < 6; ++i) {
    p(i, 0) = i;
    p(i, 1) = 10 + i;
  }
  const Stack s = to_stack(p, 2, 3);
  CHECK(s[0](1, 0) == 3);
  CHECK(s[1](0, 2) == 12);
}
