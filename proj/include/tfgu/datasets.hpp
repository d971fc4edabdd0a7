#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tfgu/common.hpp"
#include "tfgu/image_ops.hpp"

namespace tfgu {

enum class Protocol { things_only, things_and_stuff, no_fg_bg };

const char* to_string(Protocol p);
Protocol parse_protocol(const std::string& s);

enum class Split { train, val };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string id;  // image file stem
  std::string image;
  std::optional<std::string> mask;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

/// Line-oriented manifest:
///
///   # protocol: things_only
///   # K: 3
///   # remap: lip_19_to_5.tsv
///   images/a.png<TAB>masks/a.png<TAB>train
///   images/b.png<TAB>-<TAB>val
///
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Protocol protocol = Protocol::things_only;
  int k = 1;
  std::optional<std::string> remap;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  std::vector<const ManifestEntry*> split(Split s) const;

  bool operator==(const DatasetManifest& o) const {
    return entries == o.entries && protocol == o.protocol && k == o.k && remap == o.remap;
  }
};

/// Parses and validates: referenced files must exist, split tags must be
/// train/val, image ids must be unique, K ≥ 1.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               bool check_files = true);
std::string format_manifest(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

enum class ShapeKind { disk = 1, square = 2, triangle = 3 };

struct SynthConfig {
  int count = 60;
  int side = 64;
  int classes = 3;  // ground-truth classes besides background
  int min_shapes = 1, max_shapes = 3;
  int min_size = 10, max_size = 18;  // disk radius / square and triangle half-extent
  double noise = 0.03;
  int val_every = 2;  // every n-th image goes to val
  std::uint64_t seed = 1;
  /// RGB per class, index 0 unused.
  std::vector<std::array<double, 3>> palette = {
      {0.0, 0.0, 0.0}, {0.85, 0.15, 0.15}, {0.15, 0.7, 0.2}, {0.2, 0.3, 0.9}};

  void validate() const;
};

struct SynthShape {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0, cy = 0, size = 0;

  /// Analytic footprint test at continuous coordinates.
  bool contains(double x, double y) const;
};

struct SynthSample {
  Image image;
  LabelGrid mask;
  std::vector<SynthShape> shapes;  // draw order
};

/// Renders image `index` of the set; class = shape kind, 0 = background.
/// Pixel (i, j) is tested at its centre (j + 0.5, i + 0.5).
SynthSample render_synthetic(const SynthConfig& config, int index);

/// Writes images/, masks/ and manifest.tsv under `out_dir`.
DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace tfgu
