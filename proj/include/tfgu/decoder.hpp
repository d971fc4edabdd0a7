#pragma once

#include <cstdint>

#include "tfgu/nn.hpp"

namespace tfgu {

struct DecoderConfig {
  int layers = 2;
  int input_dim = 32;  // encoder token width
  int embed_dim = 32;
  int classes = 4;     // K (including a background class when present)
  int heads = 2;
  int mlp_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbabilityMaps {
  Stack patch_probs;  // K × h×w
  Stack full_probs;   // K × H×W, bilinear upsample of patch_probs
};

/// Scaled dot-product mask: x·Cᵀ/√d with d = x.cols().
Matrix mask_op(const Matrix& x, const Matrix& classes);
ad::Var mask_op(ad::Var x, ad::Var classes);

class DecoderModel {
 public:
  static DecoderModel init(const DecoderConfig& config);
  static DecoderModel from_archive(const DecoderConfig& config, const WeightArchive& archive);
  static std::map<std::string, std::pair<int, int>> shapes(const DecoderConfig& config);

  const DecoderConfig& config() const { return config_; }
  const nn::ParamSet& params() const { return params_; }
  nn::ParamSet& params() { return params_; }
  WeightArchive to_archive() const;

  /// Learnable class embedding matrix (K×d).
  const Matrix& class_embeddings() const { return params_.at("cls_emb"); }

  /// Per-token class probabilities (n×K) on a tape; tokens is n×input_dim.
  static ad::Var forward(const DecoderConfig& config, const nn::Binding& params, ad::Var tokens);

  /// Per-token probabilities without gradient tracking.
  Matrix probabilities(const Matrix& tokens) const;

  /// Rejects token widths other than input_dim and grids that do not match
  /// the token count. Output size 0 keeps the patch grid.
  ProbabilityMaps decode(const Matrix& tokens, int grid_h, int grid_w, int out_h = 0, int out_w = 0) const;

 private:
  DecoderConfig config_;
  nn::ParamSet params_;
};

/// Uniform class probabilities, the round-one teacher.
Stack uniform_probabilities(int classes, int rows, int cols);

/// Reshapes an n×K probability matrix into K grids of h×w.
Stack to_stack(const Matrix& probs, int grid_h, int grid_w);

}  // namespace tfgu
