#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "tfgu/autograd.hpp"
#include "tfgu/nn.hpp"

namespace tfgu {

struct EncoderConfig {
  int image_size = 32;  // native square input side; positional table size
  int patch_size = 4;
  int depth = 4;
  int embed_dim = 32;
  int attn_dim = 32;
  int heads = 2;
  int mlp_dim = 128;
  std::uint64_t seed = 0;

  int native_grid() const { return image_size / patch_size; }
  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// Per-image encoder outputs.
struct FeatureBundle {
  Vector cls;            // d
  Matrix patch;          // (h·w)×d, row-major over the grid
  Grid cls_attention;    // h×w, head-averaged class row of the last block, self entry dropped
  double cls_self_attention = 0.0;
  int grid_h = 0, grid_w = 0;
};

/// Forward pass recorded on a tape, for gradient queries.
struct EncoderTrace {
  ad::Var cls;             // 1×d
  ad::Var patch;           // (h·w)×d
  ad::Var attention_delta; // 1×(h·w) zero leaf injected into the class row of every head
  Grid cls_attention;      // h×w
  int grid_h = 0, grid_w = 0;
};

struct AttentionGrad {
  Grid grad;               // h×w
  bool connected = false;  // false when the objective does not depend on the attention map
};

using EncoderObjective = std::function<ad::Var(ad::Tape&, const EncoderTrace&)>;

class EncoderModel {
 public:
  /// Builds a model from an archive, or from a seeded random init when
  /// `archive` is empty. Random parameters are rounded to f32 so that an
  /// archive round-trip reproduces them exactly.
  static EncoderModel load(const EncoderConfig& config, const WeightArchive* archive = nullptr);

  const EncoderConfig& config() const { return config_; }
  const nn::ParamSet& params() const { return params_; }
  WeightArchive to_archive() const;

  /// Tensor names and shapes the model expects.
  static std::map<std::string, std::pair<int, int>> shapes(const EncoderConfig& config);

  /// Images must have sides that are positive multiples of the patch size;
  /// positional embeddings are bilinearly resampled off the native grid.
  std::vector<FeatureBundle> encode(std::span<const Image> images) const;
  FeatureBundle encode(const Image& image) const;

  /// Records a forward pass with an attention perturbation leaf.
  EncoderTrace trace(ad::Tape& tape, const Image& image) const;

  /// d(objective)/d(class attention map). The map is perturbed through an
  /// additive leaf on every head's class row, so the result is the sum of
  /// the per-head gradients.
  AttentionGrad attention_grad(const Image& image, const EncoderObjective& objective) const;

  /// Objective value with an explicit perturbation of the class attention row;
  /// used for finite-difference checks.
  double objective_at(const Image& image, const Grid& delta, const EncoderObjective& objective) const;

 private:
  EncoderTrace forward(ad::Tape& tape, const Image& image, const Grid* delta, double* cls_self) const;

  EncoderConfig config_;
  nn::ParamSet params_;
};

/// Checks the side-length contract for one image.
void check_encoder_input(const EncoderConfig& config, const Image& image);

}  // namespace tfgu
