#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "tfgu/concepts.hpp"
#include "tfgu/encoder.hpp"
#include "tfgu/image_ops.hpp"

namespace tfgu {

inline constexpr double kDefaultBackgroundThreshold = 0.1;

struct PseudoLabel {
  std::string image_id;
  Stack responses;            // K × h×w, min-max normalized
  std::optional<Grid> bg;     // h×w background channel (foreground-only protocol)
  LabelGrid label;            // H×W; with bg present 0 = background, k+1 = concept k
  std::optional<LabelGrid> fg_prior;  // h×w binarized class attention, when recorded

  /// Channels in label order: background first when present.
  Stack class_stack() const;
  int num_classes() const { return static_cast<int>(responses.size()) + (bg ? 1 : 0); }
};

/// Similarity objective for one concept: x_cls·S/√d − 1.
ad::Var concept_objective(ad::Tape& tape, const EncoderTrace& trace, const Vector& concept_vec);

/// Gradient of the concept objective with respect to the class attention map,
/// added to the map itself.
Grid response_from_trace(ad::Tape& tape, const EncoderTrace& trace, const Vector& concept_vec);

Grid gradcam_response(const EncoderModel& model, const Image& image, const ConceptBank& bank, int k);
/// All K maps from a single forward pass.
Stack gradcam_responses(const EncoderModel& model, const Image& image, const ConceptBank& bank);

/// Joint min-max over all channels into [0,1]; a flat stack maps to zeros.
Stack normalize_responses(const Stack& responses);

/// Per-location argmax with ties broken toward the lower index.
LabelGrid argmax_channels(const Stack& channels);

struct PseudoLabelOptions {
  bool fg_only = false;
  double bg_threshold = kDefaultBackgroundThreshold;
  /// When set, responses of concepts with the opposite role are zeroed.
  std::optional<bool> patch_is_fg;
  int out_rows = 0, out_cols = 0;  // 0 keeps the patch grid size
};

PseudoLabel build_pseudo_label(const Stack& responses, const std::vector<ConceptRole>& roles,
                               const PseudoLabelOptions& opts);

/// Bilinear RoI-Align of every channel. `rect` is in grid-cell units.
Stack roi_align_label(const Stack& responses, const RectF& rect, int rows, int cols);

/// Directory of per-image records plus a line index "id<TAB>path<TAB>crc32".
///
/// Record layout (little-endian): "TFPL", version u32, id (u32 length +
/// bytes), K, h, w, H, W, flags (all u32; bit 0 = bg channel, bit 1 = u16
/// labels, bit 2 = fg prior), f16 responses K×h×w, f16 bg h×w, u8/u16
/// labels H×W, u8 prior h×w.
class LabelBank {
 public:
  /// Opens (or creates) a bank at `dir`, reading an existing index.
  explicit LabelBank(std::filesystem::path dir);

  /// Stores a record; responses are rounded to f16. Rejects duplicate ids.
  void put(const PseudoLabel& label);
  /// Loads and checksum-verifies a record.
  PseudoLabel get(const std::string& image_id) const;
  bool contains(const std::string& image_id) const { return index_.count(image_id) > 0; }

  struct Entry {
    std::string path;  // relative to the bank directory
    std::uint32_t crc = 0;
    bool operator==(const Entry&) const = default;
  };
  const std::map<std::string, Entry>& index() const { return index_; }
  /// Rebuilds the index by scanning record files.
  std::map<std::string, Entry> scan() const;
  const std::filesystem::path& dir() const { return dir_; }

  static std::vector<std::uint8_t> encode_record(const PseudoLabel& label);
  static PseudoLabel decode_record(std::span<const std::uint8_t> bytes);

 private:
  void write_index() const;

  std::filesystem::path dir_;
  std::map<std::string, Entry> index_;
};

}  // namespace tfgu
