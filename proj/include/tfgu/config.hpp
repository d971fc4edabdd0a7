#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfgu/datasets.hpp"
#include "tfgu/decoder.hpp"
#include "tfgu/encoder.hpp"
#include "tfgu/training.hpp"

namespace tfgu {

/// Every hyper-parameter of a run. Loaded from JSON; missing keys keep
/// their defaults, unknown keys are rejected.
struct RunConfig {
  std::string manifest;
  std::string output_dir = "run";
  std::uint64_t seed = 0;
  std::optional<Protocol> protocol;  // overrides the manifest's protocol

  int image_height = 64, image_width = 64;  // working resolution H×W

  EncoderConfig encoder;
  std::optional<std::string> encoder_weights;

  std::optional<int> k;  // falls back to the manifest K
  std::optional<int> k_fg, k_bg;
  std::vector<double> betas = {0.5, 0.4, 0.3, 0.2};
  double fg_threshold = 0.5, bg_threshold = 0.8;
  KMeansOptions kmeans;

  double bg_response_threshold = 0.1;  // T_bg

  DecoderConfig decoder;  // input_dim and classes are derived

  int rounds = 3;
  TrainConfig train;

  std::optional<int> gt_classes;  // derived from the masks when unset

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;

  /// Single-field ranges plus cross-field consistency against a protocol
  /// and manifest K.
  void validate() const;
  void validate_against(Protocol protocol, int manifest_k) const;

  /// (K_fg, K_bg) for the protocol; K_bg is 0 for things_only and
  /// no_fg_bg. Returns nullopt for K_fg/K_bg when the split is left to the
  /// group sizes.
  struct ConceptCounts {
    int k = 0;
    std::optional<int> k_fg, k_bg;
  };
  ConceptCounts concept_counts(Protocol protocol, int manifest_k) const;
};

}  // namespace tfgu
