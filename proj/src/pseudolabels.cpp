#include "tfgu/pseudolabels.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tfgu/bytes.hpp"

namespace tfgu {

Stack PseudoLabel::class_stack() const {
  Stack out;
  if (bg) out.push_back(*bg);
  out.insert(out.end(), responses.begin(), responses.end());
  return out;
}

ad::Var concept_objective(ad::Tape& tape, const EncoderTrace& trace, const Vector& concept_vec) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(concept_vec.size()));
  ad::Var s = tape.constant(concept_vec);  // d×1
  return ad::add_scalar(ad::scale(ad::matmul(trace.cls, s), inv_sqrt_d), -1.0);
}

Grid response_from_trace(ad::Tape& tape, const EncoderTrace& trace, const Vector& concept_vec) {
  ad::Var obj = concept_objective(tape, trace, concept_vec);
  tape.backward(obj);
  Grid out = trace.cls_attention;
  if (tape.reached(trace.attention_delta)) {
    const Matrix& g = trace.attention_delta.grad();
    for (int i = 0; i < trace.grid_h * trace.grid_w; ++i) out(i / trace.grid_w, i % trace.grid_w) += g(0, i);
  }
  return out;
}

Grid gradcam_response(const EncoderModel& model, const Image& image, const ConceptBank& bank, int k) {
  if (k < 0 || k >= bank.k()) throw ShapeError("concept index out of range");
  ad::Tape tape;
  EncoderTrace t = model.trace(tape, image);
  return response_from_trace(tape, t, bank.vectors.row(k).transpose());
}

Stack gradcam_responses(const EncoderModel& model, const Image& image, const ConceptBank& bank) {
  ad::Tape tape;
  EncoderTrace t = model.trace(tape, image);
  Stack out;
  for (int k = 0; k < bank.k(); ++k) out.push_back(response_from_trace(tape, t, bank.vectors.row(k).transpose()));
  return out;
}

Stack normalize_responses(const Stack& responses) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Grid& g : responses) {
    lo = std::min(lo, g.minCoeff());
    hi = std::max(hi, g.maxCoeff());
  }
  Stack out;
  for (const Grid& g : responses) {
    if (hi > lo) {
      out.push_back(((g.array() - lo) / (hi - lo)).matrix());
    } else {
      out.push_back(Grid::Zero(g.rows(), g.cols()));
    }
  }
  return out;
}

LabelGrid argmax_channels(const Stack& channels) {
  if (channels.empty()) throw ShapeError("argmax over an empty stack");
  const auto h = channels[0].rows(), w = channels[0].cols();
  LabelGrid out = LabelGrid::Zero(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      int best = 0;
      for (int k = 1; k < static_cast<int>(channels.size()); ++k) {
        if (channels[k](i, j) > channels[best](i, j)) best = k;
      }
      out(i, j) = best;
    }
  return out;
}

PseudoLabel build_pseudo_label(const Stack& responses, const std::vector<ConceptRole>& roles,
                               const PseudoLabelOptions& opts) {
  if (responses.empty()) throw ShapeError("no response maps");
  if (!roles.empty() && roles.size() != responses.size()) throw ShapeError("roles do not match response count");
  PseudoLabel out;
  out.responses = responses;
  if (opts.patch_is_fg) {
    const ConceptRole opposite = *opts.patch_is_fg ? ConceptRole::bg : ConceptRole::fg;
    for (std::size_t k = 0; k < roles.size(); ++k) {
      if (roles[k] == opposite) out.responses[k].setZero();
    }
  }
  const auto h = responses[0].rows(), w = responses[0].cols();
  if (opts.fg_only) {
    Grid peak = out.responses[0];
    for (const Grid& g : out.responses) peak = peak.cwiseMax(g);
    out.bg = (opts.bg_threshold - peak.array()).cwiseMax(0.0).matrix();
  }
  const LabelGrid grid = argmax_channels(out.class_stack());
  const int rows = opts.out_rows > 0 ? opts.out_rows : static_cast<int>(h);
  const int cols = opts.out_cols > 0 ? opts.out_cols : static_cast<int>(w);
  out.label = resize_nearest(grid, rows, cols);
  return out;
}

Stack roi_align_label(const Stack& responses, const RectF& rect, int rows, int cols) {
  if (!responses.empty()) {
    const double gh = static_cast<double>(responses[0].rows()), gw = static_cast<double>(responses[0].cols());
    if (rect.x < 0.0 || rect.y < 0.0 || rect.x + rect.width > gw + 1e-9 || rect.y + rect.height > gh + 1e-9) {
      throw ShapeError("roi_align_label: region outside the grid");
    }
  }
  Stack out;
  for (const Grid& g : responses) out.push_back(roi_align(g, rect, rows, cols));
  return out;
}

// ---------------------------------------------------------------------------
// LabelBank

namespace {

constexpr char kRecordMagic[4] = {'T', 'F', 'P', 'L'};
constexpr std::uint32_t kRecordVersion = 1;
constexpr std::uint32_t kFlagBg = 1, kFlagWide = 2, kFlagPrior = 4;
const char* kIndexName = "index.tsv";

std::string record_name(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == '\t' || c == '\n') c = '_';
  }
  return "records/" + s + ".tfpl";
}

}  // namespace

std::vector<std::uint8_t> LabelBank::encode_record(const PseudoLabel& l) {
  if (l.responses.empty()) throw ShapeError("pseudo label without responses");
  const auto h = static_cast<std::uint32_t>(l.responses[0].rows());
  const auto w = static_cast<std::uint32_t>(l.responses[0].cols());
  const bool wide = l.label.size() > 0 && l.label.maxCoeff() > 255;
  if (l.label.size() > 0 && (l.label.minCoeff() < 0 || l.label.maxCoeff() > 65535)) {
    throw FormatError("label value out of range");
  }
  std::uint32_t flags = 0;
  if (l.bg) flags |= kFlagBg;
  if (wide) flags |= kFlagWide;
  if (l.fg_prior) flags |= kFlagPrior;

  ByteWriter wr;
  wr.bytes(kRecordMagic, 4);
  wr.u32(kRecordVersion);
  wr.u32(static_cast<std::uint32_t>(l.image_id.size()));
  wr.bytes(l.image_id.data(), l.image_id.size());
  wr.u32(static_cast<std::uint32_t>(l.responses.size()));
  wr.u32(h);
  wr.u32(w);
  wr.u32(static_cast<std::uint32_t>(l.label.rows()));
  wr.u32(static_cast<std::uint32_t>(l.label.cols()));
  wr.u32(flags);
  auto put_grid = [&](const Grid& g) {
    if (g.rows() != h || g.cols() != w) throw ShapeError("response grids differ in size");
    for (std::uint32_t i = 0; i < h; ++i)
      for (std::uint32_t j = 0; j < w; ++j) wr.u16(to_half_bits(g(i, j)));
  };
  for (const Grid& g : l.responses) put_grid(g);
  if (l.bg) put_grid(*l.bg);
  for (Eigen::Index i = 0; i < l.label.rows(); ++i)
    for (Eigen::Index j = 0; j < l.label.cols(); ++j) {
      if (wide) {
        wr.u16(static_cast<std::uint16_t>(l.label(i, j)));
      } else {
        wr.u8(static_cast<std::uint8_t>(l.label(i, j)));
      }
    }
  if (l.fg_prior) {
    if (l.fg_prior->rows() != h || l.fg_prior->cols() != w) throw ShapeError("prior grid size mismatch");
    for (std::uint32_t i = 0; i < h; ++i)
      for (std::uint32_t j = 0; j < w; ++j) wr.u8(static_cast<std::uint8_t>((*l.fg_prior)(i, j) != 0));
  }
  return wr.take();
}

PseudoLabel LabelBank::decode_record(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kRecordMagic, 4) != 0) throw FormatError("bad pseudo-label record magic");
  if (r.u32() != kRecordVersion) throw FormatError("unsupported pseudo-label record version");
  PseudoLabel l;
  const auto id_len = r.u32();
  auto id = r.take(id_len);
  l.image_id.assign(id.begin(), id.end());
  const auto k = r.u32(), h = r.u32(), w = r.u32(), big_h = r.u32(), big_w = r.u32(), flags = r.u32();
  auto get_grid = [&]() {
    Grid g(h, w);
    for (std::uint32_t i = 0; i < h; ++i)
      for (std::uint32_t j = 0; j < w; ++j) g(i, j) = from_half_bits(r.u16());
    return g;
  };
  for (std::uint32_t c = 0; c < k; ++c) l.responses.push_back(get_grid());
  if (flags & kFlagBg) l.bg = get_grid();
  l.label.resize(big_h, big_w);
  for (std::uint32_t i = 0; i < big_h; ++i)
    for (std::uint32_t j = 0; j < big_w; ++j) l.label(i, j) = (flags & kFlagWide) ? r.u16() : r.u8();
  if (flags & kFlagPrior) {
    LabelGrid p(h, w);
    for (std::uint32_t i = 0; i < h; ++i)
      for (std::uint32_t j = 0; j < w; ++j) p(i, j) = r.u8();
    l.fg_prior = std::move(p);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in pseudo-label record");
  return l;
}

LabelBank::LabelBank(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_ / "records");
  std::ifstream in(dir_ / kIndexName);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, path, crc;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, path, '\t') || !std::getline(ls, crc)) {
      throw FormatError("malformed label bank index line: " + line);
    }
    index_[id] = {path, static_cast<std::uint32_t>(std::stoul(crc))};
  }
}

void LabelBank::write_index() const {
  std::ostringstream os;
  for (const auto& [id, e] : index_) os << id << '\t' << e.path << '\t' << e.crc << '\n';
  const std::string s = os.str();
  write_file(dir_ / kIndexName, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void LabelBank::put(const PseudoLabel& label) {
  if (index_.count(label.image_id)) throw FormatError("duplicate pseudo-label id '" + label.image_id + "'");
  const auto bytes = encode_record(label);
  const std::string rel = record_name(label.image_id);
  write_file(dir_ / rel, bytes);
  index_[label.image_id] = {rel, crc32(bytes)};
  write_index();
}

PseudoLabel LabelBank::get(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw NotFoundError("no pseudo label for '" + image_id + "'");
  const auto bytes = read_file(dir_ / it->second.path);
  if (crc32(bytes) != it->second.crc) throw ChecksumError("checksum mismatch for pseudo label '" + image_id + "'");
  return decode_record(bytes);
}

std::map<std::string, LabelBank::Entry> LabelBank::scan() const {
  std::map<std::string, Entry> out;
  for (const auto& f : std::filesystem::directory_iterator(dir_ / "records")) {
    if (f.path().extension() != ".tfpl") continue;
    const auto bytes = read_file(f.path());
    const PseudoLabel l = decode_record(bytes);
    out[l.image_id] = {"records/" + f.path().filename().string(), crc32(bytes)};
  }
  return out;
}

}  // namespace tfgu
