#include "tfgu/encoder.hpp"

#include "tfgu/image_ops.hpp"

namespace tfgu {

namespace {

constexpr double kPixelMean[3] = {0.485, 0.456, 0.406};
constexpr double kPixelStd[3] = {0.229, 0.224, 0.225};

nn::BlockShape block_shape(const EncoderConfig& c) {
  return {c.embed_dim, c.attn_dim, c.heads, c.mlp_dim};
}

std::string block_prefix(int i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("encoder image_size must be a positive multiple of patch_size");
  }
  if (depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (heads < 1 || embed_dim % heads != 0 || attn_dim % heads != 0) {
    throw ConfigError("encoder embed_dim and attn_dim must be divisible by heads");
  }
  if (mlp_dim < 1) throw ConfigError("encoder mlp_dim must be >= 1");
}

void check_encoder_input(const EncoderConfig& config, const Image& image) {
  const int h = image.height(), w = image.width();
  if (h <= 0 || w <= 0 || h % config.patch_size != 0 || w % config.patch_size != 0) {
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of patch size " + std::to_string(config.patch_size));
  }
}

std::map<std::string, std::pair<int, int>> EncoderModel::shapes(const EncoderConfig& c) {
  std::map<std::string, std::pair<int, int>> s;
  const int g = c.native_grid();
  s["patch_embed"] = {3 * c.patch_size * c.patch_size, c.embed_dim};
  s["patch_embed_bias"] = {1, c.embed_dim};
  s["cls_token"] = {1, c.embed_dim};
  s["pos_embed"] = {1 + g * g, c.embed_dim};
  for (int i = 0; i < c.depth; ++i) nn::block_shapes(block_prefix(i), block_shape(c), s);
  s["norm.gamma"] = {1, c.embed_dim};
  s["norm.beta"] = {1, c.embed_dim};
  return s;
}

EncoderModel EncoderModel::load(const EncoderConfig& config, const WeightArchive* archive) {
  config.validate();
  EncoderModel m;
  m.config_ = config;
  if (archive) {
    m.params_ = nn::from_archive(*archive, shapes(config));
  } else {
    Rng rng(derive_seed(config.seed, 0xe1c0de));
    m.params_ = nn::init_params(shapes(config), rng);
  }
  return m;
}

WeightArchive EncoderModel::to_archive() const {
  WeightArchive a;
  nn::to_archive(params_, a);
  return a;
}

EncoderTrace EncoderModel::forward(ad::Tape& tape, const Image& image, const Grid* delta,
                                   double* cls_self) const {
  using namespace ad;
  check_encoder_input(config_, image);
  const int p = config_.patch_size;
  const int gh = image.height() / p, gw = image.width() / p, n = gh * gw;
  const int g = config_.native_grid();

  // flatten patches channel-major, then row, then column within a patch
  Matrix patches(n, 3 * p * p);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      for (int ch = 0; ch < 3; ++ch)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px) {
            const double v = image.channels[ch](r * p + py, c * p + px);
            patches(r * gw + c, ch * p * p + py * p + px) = (v - kPixelMean[ch]) / kPixelStd[ch];
          }

  Matrix pos = params_.at("pos_embed");
  if (gh != g || gw != g) {
    Matrix resized(1 + n, config_.embed_dim);
    resized.row(0) = pos.row(0);
    for (int d = 0; d < config_.embed_dim; ++d) {
      Grid native(g, g);
      for (int i = 0; i < g * g; ++i) native(i / g, i % g) = pos(1 + i, d);
      const Grid out = resize_bilinear(native, gh, gw);
      for (int i = 0; i < n; ++i) resized(1 + i, d) = out(i / gw, i % gw);
    }
    pos = std::move(resized);
  }

  nn::Binding b(tape, params_, false);
  Var tokens = add_row(matmul(tape.constant(std::move(patches)), b["patch_embed"]), b["patch_embed_bias"]);
  Var parts[] = {b["cls_token"], tokens};
  Var x = add(concat_rows(parts), tape.constant(std::move(pos)));

  EncoderTrace trace;
  trace.grid_h = gh;
  trace.grid_w = gw;
  nn::AttentionProbe probe;
  Matrix delta_row = Matrix::Zero(1, n);
  if (delta) {
    for (int i = 0; i < n; ++i) delta_row(0, i) = (*delta)(i / gw, i % gw);
  }
  probe.class_row_delta = tape.variable(std::move(delta_row));
  trace.attention_delta = probe.class_row_delta;

  const auto shape = block_shape(config_);
  for (int i = 0; i < config_.depth; ++i) {
    x = nn::block_forward(b, block_prefix(i), shape, x, i + 1 == config_.depth ? &probe : nullptr);
  }
  x = layer_norm_rows(x, b["norm.gamma"], b["norm.beta"]);
  trace.cls = slice_rows(x, 0, 1);
  trace.patch = slice_rows(x, 1, n);

  trace.cls_attention = Grid::Zero(gh, gw);
  double self = 0.0;
  for (const Matrix& a : probe.head_attention) {
    self += a(0, 0);
    for (int i = 0; i < n; ++i) trace.cls_attention(i / gw, i % gw) += a(0, 1 + i);
  }
  const double inv_heads = 1.0 / static_cast<double>(probe.head_attention.size());
  trace.cls_attention *= inv_heads;
  if (cls_self) *cls_self = self * inv_heads;
  return trace;
}

EncoderTrace EncoderModel::trace(ad::Tape& tape, const Image& image) const {
  return forward(tape, image, nullptr, nullptr);
}

FeatureBundle EncoderModel::encode(const Image& image) const {
  ad::Tape tape;
  FeatureBundle f;
  EncoderTrace t = forward(tape, image, nullptr, &f.cls_self_attention);
  f.cls = t.cls.value().row(0).transpose();
  f.patch = t.patch.value();
  f.cls_attention = std::move(t.cls_attention);
  f.grid_h = t.grid_h;
  f.grid_w = t.grid_w;
  return f;
}

std::vector<FeatureBundle> EncoderModel::encode(std::span<const Image> images) const {
  std::vector<FeatureBundle> out;
  out.reserve(images.size());
  for (const Image& img : images) out.push_back(encode(img));
  return out;
}

AttentionGrad EncoderModel::attention_grad(const Image& image, const EncoderObjective& objective) const {
  ad::Tape tape;
  EncoderTrace t = forward(tape, image, nullptr, nullptr);
  ad::Var obj = objective(tape, t);
  if (obj.rows() != 1 || obj.cols() != 1) throw ShapeError("objective must be a scalar");
  tape.backward(obj);
  AttentionGrad out;
  out.grad = Grid::Zero(t.grid_h, t.grid_w);
  out.connected = tape.reached(t.attention_delta) && tape.requires_grad(obj);
  if (out.connected) {
    const Matrix& g = t.attention_delta.grad();
    for (int i = 0; i < t.grid_h * t.grid_w; ++i) out.grad(i / t.grid_w, i % t.grid_w) = g(0, i);
  }
  return out;
}

double EncoderModel::objective_at(const Image& image, const Grid& delta,
                                  const EncoderObjective& objective) const {
  ad::Tape tape;
  EncoderTrace t = forward(tape, image, &delta, nullptr);
  return objective(tape, t).scalar();
}

}  // namespace tfgu
