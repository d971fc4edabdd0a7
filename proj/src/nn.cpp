#include "tfgu/nn.hpp"

#include <cmath>
#include <cstring>

namespace tfgu::nn {

Binding::Binding(ad::Tape& tape, const ParamSet& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, m] : params) vars_.emplace(name, trainable ? tape.variable(m) : tape.constant(m));
}

ad::Var Binding::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw NotFoundError("unbound parameter '" + name + "'");
  return it->second;
}

ParamSet Binding::gradients() const {
  ParamSet g;
  for (const auto& [name, v] : vars_) g.emplace(name, v.grad());
  return g;
}

void block_shapes(const std::string& prefix, const BlockShape& s,
                  std::map<std::string, std::pair<int, int>>& out) {
  out[prefix + "norm1.gamma"] = {1, s.dim};
  out[prefix + "norm1.beta"] = {1, s.dim};
  out[prefix + "qkv"] = {s.dim, 3 * s.attn_dim};
  out[prefix + "qkv_bias"] = {1, 3 * s.attn_dim};
  out[prefix + "proj"] = {s.attn_dim, s.dim};
  out[prefix + "proj_bias"] = {1, s.dim};
  out[prefix + "norm2.gamma"] = {1, s.dim};
  out[prefix + "norm2.beta"] = {1, s.dim};
  out[prefix + "fc1"] = {s.dim, s.mlp_dim};
  out[prefix + "fc1_bias"] = {1, s.mlp_dim};
  out[prefix + "fc2"] = {s.mlp_dim, s.dim};
  out[prefix + "fc2_bias"] = {1, s.dim};
}

ad::Var block_forward(const Binding& p, const std::string& prefix, const BlockShape& s, ad::Var x,
                      AttentionProbe* probe) {
  using namespace ad;
  const int head_dim = s.attn_dim / s.heads;
  const double scale_qk = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var h = layer_norm_rows(x, p[prefix + "norm1.gamma"], p[prefix + "norm1.beta"]);
  Var qkv = add_row(matmul(h, p[prefix + "qkv"]), p[prefix + "qkv_bias"]);
  std::vector<Var> heads;
  for (int i = 0; i < s.heads; ++i) {
    Var q = slice_cols(qkv, i * head_dim, head_dim);
    Var k = slice_cols(qkv, s.attn_dim + i * head_dim, head_dim);
    Var v = slice_cols(qkv, 2 * s.attn_dim + i * head_dim, head_dim);
    Var a = softmax_rows(scale(matmul_bt(q, k), scale_qk));
    if (probe) {
      if (probe->class_row_delta.valid()) a = add_block(a, probe->class_row_delta, 0, 1);
      probe->head_attention.push_back(a.value());
    }
    heads.push_back(matmul(a, v));
  }
  Var attn = add_row(matmul(concat_cols(heads), p[prefix + "proj"]), p[prefix + "proj_bias"]);
  Var y = add(x, attn);
  Var m = layer_norm_rows(y, p[prefix + "norm2.gamma"], p[prefix + "norm2.beta"]);
  m = gelu(add_row(matmul(m, p[prefix + "fc1"]), p[prefix + "fc1_bias"]));
  m = add_row(matmul(m, p[prefix + "fc2"]), p[prefix + "fc2_bias"]);
  return add(y, m);
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ParamSet init_params(const std::map<std::string, std::pair<int, int>>& shapes, Rng& rng) {
  ParamSet out;
  for (const auto& [name, shape] : shapes) {
    const auto [rows, cols] = shape;
    Matrix m;
    if (ends_with(name, ".gamma")) {
      m = Matrix::Ones(rows, cols);
    } else if (ends_with(name, "_bias") || ends_with(name, ".beta")) {
      m = Matrix::Zero(rows, cols);
    } else {
      // token tables use a small fixed scale
      const bool table = name == "cls_token" || name == "pos_embed" || name == "cls_emb";
      const double sd = table ? 0.02 : 1.0 / std::sqrt(static_cast<double>(rows));
      m.resize(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = round_to(DType::f32, sd * rng.normal());
    }
    out.emplace(name, std::move(m));
  }
  return out;
}

void to_archive(const ParamSet& params, WeightArchive& archive) {
  for (const auto& [name, m] : params) archive.add(name, m);
}

ParamSet from_archive(const WeightArchive& archive,
                      const std::map<std::string, std::pair<int, int>>& shapes) {
  ParamSet out;
  for (const auto& [name, shape] : shapes) {
    const Tensor* t = archive.find(name);
    if (!t) throw ShapeError("archive is missing tensor '" + name + "'");
    const bool ok = (t->shape.size() == 2 && t->shape[0] == shape.first && t->shape[1] == shape.second) ||
                    (t->shape.size() == 1 && shape.first == 1 && t->shape[0] == shape.second);
    if (!ok) {
      std::string got;
      for (auto d : t->shape) got += (got.empty() ? "" : "x") + std::to_string(d);
      throw ShapeError("tensor '" + name + "' has shape " + got + ", expected " +
                       std::to_string(shape.first) + "x" + std::to_string(shape.second));
    }
    out.emplace(name, t->as_matrix());
  }
  return out;
}

std::uint32_t checksum(const ParamSet& params) {
  std::vector<std::uint8_t> buf;
  for (const auto& [name, m] : params) {
    buf.insert(buf.end(), name.begin(), name.end());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint8_t b[sizeof(double)];
      const double v = m(i);
      std::memcpy(b, &v, sizeof v);
      buf.insert(buf.end(), b, b + sizeof b);
    }
  }
  return crc32(buf);
}

}  // namespace tfgu::nn
