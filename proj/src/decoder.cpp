#include "tfgu/decoder.hpp"

#include <cmath>

#include "tfgu/image_ops.hpp"

namespace tfgu {

namespace {

nn::BlockShape block_shape(const DecoderConfig& c) { return {c.embed_dim, c.embed_dim, c.heads, c.mlp_dim}; }

std::string block_prefix(int i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

void DecoderConfig::validate() const {
  if (layers < 1) throw ConfigError("decoder layers must be >= 1");
  if (classes < 1) throw ConfigError("decoder class count must be >= 1");
  if (heads < 1 || embed_dim % heads != 0) throw ConfigError("decoder embed_dim must be divisible by heads");
  if (input_dim < 1 || mlp_dim < 1) throw ConfigError("decoder dimensions must be positive");
}

Matrix mask_op(const Matrix& x, const Matrix& classes) {
  if (x.cols() != classes.cols()) throw ShapeError("mask_op: embedding widths differ");
  return x * classes.transpose() / std::sqrt(static_cast<double>(x.cols()));
}

ad::Var mask_op(ad::Var x, ad::Var classes) {
  return ad::scale(ad::matmul_bt(x, classes), 1.0 / std::sqrt(static_cast<double>(x.cols())));
}

std::map<std::string, std::pair<int, int>> DecoderModel::shapes(const DecoderConfig& c) {
  std::map<std::string, std::pair<int, int>> s;
  s["proj_in"] = {c.input_dim, c.embed_dim};
  s["proj_in_bias"] = {1, c.embed_dim};
  s["cls_emb"] = {c.classes, c.embed_dim};
  for (int i = 0; i < c.layers; ++i) nn::block_shapes(block_prefix(i), block_shape(c), s);
  s["norm.gamma"] = {1, c.embed_dim};
  s["norm.beta"] = {1, c.embed_dim};
  return s;
}

DecoderModel DecoderModel::init(const DecoderConfig& config) {
  config.validate();
  DecoderModel m;
  m.config_ = config;
  Rng rng(derive_seed(config.seed, 0xdec0de));
  m.params_ = nn::init_params(shapes(config), rng);
  return m;
}

DecoderModel DecoderModel::from_archive(const DecoderConfig& config, const WeightArchive& archive) {
  config.validate();
  DecoderModel m;
  m.config_ = config;
  m.params_ = nn::from_archive(archive, shapes(config));
  return m;
}

WeightArchive DecoderModel::to_archive() const {
  WeightArchive a;
  nn::to_archive(params_, a);
  return a;
}

ad::Var DecoderModel::forward(const DecoderConfig& c, const nn::Binding& p, ad::Var tokens) {
  using namespace ad;
  if (tokens.cols() != c.input_dim) {
    throw ShapeError("decoder expects token width " + std::to_string(c.input_dim) + ", got " +
                     std::to_string(tokens.cols()));
  }
  const auto n = tokens.rows();
  Var x = add_row(matmul(tokens, p["proj_in"]), p["proj_in_bias"]);
  Var parts[] = {x, p["cls_emb"]};
  Var z = concat_rows(parts);
  const auto shape = block_shape(c);
  for (int i = 0; i < c.layers; ++i) z = nn::block_forward(p, block_prefix(i), shape, z);
  z = layer_norm_rows(z, p["norm.gamma"], p["norm.beta"]);
  Var patches = slice_rows(z, 0, n);
  Var classes = slice_rows(z, n, c.classes);
  return softmax_rows(mask_op(patches, classes));
}

Matrix DecoderModel::probabilities(const Matrix& tokens) const {
  ad::Tape tape;
  nn::Binding b(tape, params_, false);
  return forward(config_, b, tape.constant(tokens)).value();
}

ProbabilityMaps DecoderModel::decode(const Matrix& tokens, int grid_h, int grid_w, int out_h, int out_w) const {
  if (tokens.rows() != static_cast<Eigen::Index>(grid_h) * grid_w) {
    throw ShapeError("token count does not match the " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " grid");
  }
  ProbabilityMaps out;
  out.patch_probs = to_stack(probabilities(tokens), grid_h, grid_w);
  if (out_h <= 0) out_h = grid_h;
  if (out_w <= 0) out_w = grid_w;
  out.full_probs = resize_bilinear(out.patch_probs, out_h, out_w);
  return out;
}

Stack uniform_probabilities(int classes, int rows, int cols) {
  return Stack(classes, Grid::Constant(rows, cols, 1.0 / classes));
}

Stack to_stack(const Matrix& probs, int grid_h, int grid_w) {
  Stack out(probs.cols(), Grid(grid_h, grid_w));
  for (Eigen::Index k = 0; k < probs.cols(); ++k)
    for (int i = 0; i < grid_h * grid_w; ++i) out[k](i / grid_w, i % grid_w) = probs(i, k);
  return out;
}

}  // namespace tfgu
