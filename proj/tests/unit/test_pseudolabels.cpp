#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "tfgu/pseudolabels.hpp"

using namespace tfgu;
namespace fs = std::filesystem;

namespace {

Stack random_stack(int k, int h, int w, Rng& rng, double grid = 64.0) {
  Stack s;
  for (int c = 0; c < k; ++c) {
    Grid g(h, w);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = static_cast<double>(rng.below(static_cast<std::uint64_t>(grid))) / grid;
    s.push_back(g);
  }
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

PseudoLabel sample_label(const std::string& id, Rng& rng, bool bg, bool prior) {
  const Stack r = normalize_responses(random_stack(3, 4, 5, rng));
  PseudoLabelOptions o;
  o.fg_only = bg;
  o.out_rows = 8;
  o.out_cols = 10;
  PseudoLabel l = build_pseudo_label(r, {}, o);
  l.image_id = id;
  if (prior) l.fg_prior = LabelGrid::Ones(4, 5);
  return l;
}

}  // namespace

TEST_CASE("background channel") {
  const Stack low(3, Grid::Constant(2, 2, 0.05));
  PseudoLabelOptions o;
  o.fg_only = true;
  o.bg_threshold = 0.1;
  const PseudoLabel a = build_pseudo_label(low, {}, o);
  REQUIRE(a.bg);
  CHECK((a.bg->array() - 0.05).abs().maxCoeff() < 1e-15);
  CHECK(a.label.isZero());

  Rng rng(4);
  Stack high = random_stack(3, 3, 3, rng);
  for (Grid& g : high) g.array() += 0.1;
  const PseudoLabel b = build_pseudo_label(high, {}, o);
  CHECK(b.bg->isZero());
  const LabelGrid plain = argmax_channels(high);
  CHECK(b.label == (plain.array() + 1).matrix());
  CHECK(b.num_classes() == 4);
}

TEST_CASE("argmax ties go to the lower index") {
  Stack s(3, Grid::Zero(1, 2));
  s[1](0, 0) = s[2](0, 0) = 0.7;
  s[0](0, 1) = s[2](0, 1) = 0.4;
  const LabelGrid l = argmax_channels(s);
  CHECK(l(0, 0) == 1);
  CHECK(l(0, 1) == 0);
}

TEST_CASE("role override zeroes concepts of the opposite role") {
  Stack s(2, Grid::Zero(1, 1));
  s[0](0, 0) = 0.9;  // bg concept
  s[1](0, 0) = 0.5;  // fg concept
  PseudoLabelOptions o;
  o.patch_is_fg = true;
  const PseudoLabel l = build_pseudo_label(s, {ConceptRole::bg, ConceptRole::fg}, o);
  CHECK(l.label(0, 0) == 1);
  CHECK(l.responses[0](0, 0) == 0.0);
}

TEST_CASE("argmax is invariant under strictly increasing channel-uniform transforms") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Stack s = random_stack(4, 5, 6, rng);
    const LabelGrid base = argmax_channels(s);
    for (auto f : {+[](double x) { return std::exp(3.0 * x); }, +[](double x) { return x * x * x + 2.0 * x - 1.0; },
                   +[](double x) { return std::log1p(x); }}) {
      Stack t;
      for (const Grid& g : s) t.push_back(g.unaryExpr(f));
      CHECK(argmax_channels(t) == base);
      PseudoLabelOptions o;
      CHECK(build_pseudo_label(t, {}, o).label == build_pseudo_label(s, {}, o).label);
    }
  }
}

TEST_CASE("joint min-max normalization") {
  Stack s = {Grid::Constant(2, 2, 1.0), Grid::Constant(2, 2, 3.0)};
  s[0](0, 0) = -1.0;
  const Stack n = normalize_responses(s);
  CHECK(n[0](0, 0) == 0.0);
  CHECK(n[1](1, 1) == 1.0);
  CHECK(n[0](1, 1) == doctest::Approx(0.5));
  const Stack flat = normalize_responses({Grid::Constant(2, 2, 5.0)});
  CHECK(flat[0].isZero());
}

TEST_CASE("grad-cam with a zero gradient returns the attention map") {
  EncoderConfig c;
  c.image_size = 16;
  const EncoderModel m = EncoderModel::load(c);
  Image img(16, 16, 0.4);
  img.channels[0](3, 5) = 1.0;
  ConceptBank bank;
  bank.vectors = Matrix::Zero(2, c.embed_dim);
  bank.roles = {ConceptRole::fg, ConceptRole::fg};
  const Grid r = gradcam_response(m, img, bank, 1);
  CHECK(r == m.encode(img).cls_attention);
  CHECK(r.rows() == 4);
  CHECK(gradcam_responses(m, img, bank).size() == 2);
  CHECK_THROWS_AS(gradcam_response(m, img, bank, 2), ShapeError);
}

TEST_CASE("grad-cam on a linear fixture matches central differences") {
  // x_cls = (A + δ)·P / n: the class feature is an attention-weighted patch mean
  Rng rng(31);
  const int gh = 3, gw = 4, n = gh * gw, d = 5;
  Matrix patches(n, d), attn(1, n);
  for (Eigen::Index i = 0; i < patches.size(); ++i) patches(i) = rng.normal();
  for (int i = 0; i < n; ++i) attn(0, i) = rng.uniform();
  Vector s(d);
  for (auto& v : s) v = rng.normal();

  auto make_trace = [&](ad::Tape& tape, const Matrix& delta) {
    EncoderTrace tr;
    tr.grid_h = gh;
    tr.grid_w = gw;
    tr.attention_delta = tape.variable(delta);
    tr.cls = ad::scale(ad::matmul(ad::add(tape.constant(attn), tr.attention_delta), tape.constant(patches)), 1.0 / n);
    tr.cls_attention = Grid(gh, gw);
    for (int i = 0; i < n; ++i) tr.cls_attention(i / gw, i % gw) = attn(0, i);
    return tr;
  };

  ad::Tape tape;
  const EncoderTrace tr = make_trace(tape, Matrix::Zero(1, n));
  const Grid resp = response_from_trace(tape, tr, s);
  Grid grad = resp - tr.cls_attention;
  CHECK(grad.rows() == gh);

  const Matrix fd = oracle::fd_gradient(
      [&](const Matrix& delta) {
        ad::Tape t;
        return concept_objective(t, make_trace(t, delta), s).scalar();
      },
      Matrix::Zero(1, n));
  Matrix grad_row(1, n);
  for (int i = 0; i < n; ++i) grad_row(0, i) = grad(i / gw, i % gw);
  CHECK(oracle::rel_error(grad_row, fd) < 1e-4);
}

TEST_CASE("roi align of label channels") {
  Grid ramp(4, 6);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) ramp(i, j) = 2.0 * j + 0.5 * i;
  const Stack s = {ramp, Grid::Constant(4, 6, 0.25)};

  // aligned rect: equals the sliced sub-grid
  const Stack a = roi_align_label(s, {1, 1, 3, 2}, 2, 3);
  CHECK(a[0] == ramp.block(1, 1, 2, 3));
  CHECK((a[1].array() - 0.25).abs().maxCoeff() == 0.0);

  // half-cell shift on a linear ramp: sample centres sit at j + 1, i + 1 in
  // cell-centre coordinates (i.e. 0.5 beyond the aligned case)
  const Stack b = roi_align_label(s, {1.5, 1.5, 3, 2}, 2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(b[0](i, j) == doctest::Approx(2.0 * (j + 1.5) + 0.5 * (i + 1.5)));

  CHECK_THROWS_AS(roi_align_label(s, {4, 0, 3, 2}, 2, 2), ShapeError);
  CHECK_THROWS_AS(roi_align_label(s, {0, 0, 0, 2}, 2, 2), ShapeError);
}

TEST_CASE("label bank round-trip, index scan and corruption") {
  const fs::path dir = fresh_dir("tfgu_bank_test");
  Rng rng(2);
  const PseudoLabel a = sample_label("img_a", rng, true, true);
  const PseudoLabel b = sample_label("img_b", rng, false, false);
  {
    LabelBank bank(dir);
    bank.put(a);
    bank.put(b);
    CHECK_THROWS_AS(bank.put(a), FormatError);
  }
  LabelBank bank(dir);
  const PseudoLabel ra = bank.get("img_a");
  CHECK(ra.label == a.label);
  REQUIRE(ra.bg);
  REQUIRE(ra.fg_prior);
  CHECK(*ra.fg_prior == *a.fg_prior);
  for (std::size_t k = 0; k < a.responses.size(); ++k)
    CHECK(ra.responses[k] == a.responses[k].unaryExpr([](double v) { return round_to(DType::f16, v); }));
  // re-encoding a decoded record is bit-exact
  CHECK(LabelBank::encode_record(ra) == LabelBank::encode_record(LabelBank::decode_record(LabelBank::encode_record(ra))));
  CHECK_FALSE(bank.get("img_b").bg);
  CHECK_THROWS_AS(bank.get("nope"), NotFoundError);
  CHECK(bank.scan() == bank.index());

  // flip one payload byte
  const fs::path rec = dir / bank.index().at("img_b").path;
  auto bytes = read_file(rec);
  bytes[bytes.size() - 1] ^= 0x01;
  write_file(rec, bytes);
  CHECK_THROWS_AS(bank.get("img_b"), ChecksumError);
  fs::remove_all(dir);
}

TEST_CASE("wide label values use 16-bit storage") {
  PseudoLabel l;
  l.image_id = "wide";
  l.responses = Stack(300, Grid::Zero(1, 1));
  l.label = LabelGrid::Constant(2, 2, 299);
  const PseudoLabel r = LabelBank::decode_record(LabelBank::encode_record(l));
  CHECK(r.label == l.label);
}
