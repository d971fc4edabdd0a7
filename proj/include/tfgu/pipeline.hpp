#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tfgu/config.hpp"
#include "tfgu/cropping.hpp"
#include "tfgu/evaluation.hpp"
#include "tfgu/pseudolabels.hpp"

namespace tfgu {

/// File layout of a run directory. Stages communicate only through these.
struct Workspace {
  std::filesystem::path root;

  explicit Workspace(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path crops() const { return root / "crops.tfgu"; }
  std::filesystem::path concepts() const { return root / "concepts.tfgu"; }
  std::filesystem::path labels() const { return root / "labels"; }
  std::filesystem::path decoder(int round) const { return root / ("decoder_round" + std::to_string(round) + ".tfgu"); }
  std::filesystem::path final_decoder() const { return root / "decoder.tfgu"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path eval_report() const { return root / "eval.json"; }
  std::filesystem::path viz() const { return root / "viz"; }
  /// TRANSFGU_CACHE when set, else <root>/cache.
  std::filesystem::path cache() const;
};

/// Crop feature store: per-crop class features with group tags.
struct CropStore {
  Matrix features;                // N×d
  std::vector<CropGroup> groups;  // per row
  std::vector<CropRect> rects;    // image_id holds the manifest id
  std::vector<int> image_index;   // manifest entry index per row

  WeightArchive to_archive() const;
  static CropStore from_archive(const WeightArchive& a, const DatasetManifest& manifest);
};

struct MineSummary {
  std::size_t images = 0, crops = 0, foreground = 0, background = 0, neutral = 0;
  std::uint32_t checksum = 0;  // crc32 of the persisted store
};

/// Resolved run context shared by the stages.
struct RunContext {
  RunConfig config;
  DatasetManifest manifest;
  Protocol protocol = Protocol::things_only;
  EncoderModel encoder;
  Workspace workspace;

  static RunContext open(const RunConfig& config);

  /// Image resized to the working resolution.
  Image working_image(const ManifestEntry& e) const;
  /// Ground-truth mask after the manifest remap, or nullopt.
  std::optional<LabelGrid> gt_mask(const ManifestEntry& e) const;
  /// Encoder features of the working image through the feature cache.
  FeatureBundle features(const ManifestEntry& e) const;
  int gt_classes() const;
  DecoderConfig decoder_config(int classes) const;
};

MineSummary cmd_mine(const RunConfig& config);
ConceptBank cmd_cluster(const RunConfig& config);
/// Returns the number of records written.
std::size_t cmd_pseudo(const RunConfig& config);

struct TrainSummary {
  EvalReport initial;                // pseudo labels on the val split
  std::vector<RoundMetrics> rounds;  // per bootstrap round
};
TrainSummary cmd_train(const RunConfig& config);

enum class EvalSource { decoder, pseudo };

/// Scores the final decoder (or pseudo labels) on the val split and writes
/// the report. With `pred_dir`, scores <id>.png rasters from that directory
/// instead.
EvalReport cmd_eval(const RunConfig& config, EvalSource source = EvalSource::decoder,
                    const std::optional<std::filesystem::path>& pred_dir = std::nullopt,
                    const std::optional<std::filesystem::path>& report = std::nullopt);

/// Writes image, label, per-concept CAM and panel rasters; returns the
/// number of CAM rasters written. Empty `ids` selects the first val image.
std::size_t cmd_viz(const RunConfig& config, const std::vector<std::string>& ids);

DatasetManifest cmd_synth(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Runs mine → cluster → pseudo → train → eval.
TrainSummary run_pipeline(const RunConfig& config);

/// CRC-32 per persisted artifact, keyed by path relative to the run dir.
std::map<std::string, std::uint32_t> artifact_checksums(const std::filesystem::path& run_dir);

}  // namespace tfgu
