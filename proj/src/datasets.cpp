#include "tfgu/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "tfgu/rng.hpp"

namespace tfgu {

namespace fs = std::filesystem;

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::things_only: return "things_only";
    case Protocol::things_and_stuff: return "things_and_stuff";
    case Protocol::no_fg_bg: return "no_fg_bg";
  }
  return "?";
}

Protocol parse_protocol(const std::string& s) {
  if (s == "things_only") return Protocol::things_only;
  if (s == "things_and_stuff") return Protocol::things_and_stuff;
  if (s == "no_fg_bg") return Protocol::no_fg_bg;
  throw ConfigError("unknown protocol '" + s + "'");
}

const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw FormatError("bad split tag '" + s + "' (expected train or val)");
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir, bool check_files) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto where = [&] { return "manifest line " + std::to_string(lineno) + ": "; };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(line.substr(1, colon - 1));
      const std::string value = trim(line.substr(colon + 1));
      if (key == "protocol") {
        m.protocol = parse_protocol(value);
      } else if (key == "K") {
        try {
          m.k = std::stoi(value);
        } catch (const std::exception&) {
          throw FormatError(where() + "K must be an integer");
        }
      } else if (key == "remap") {
        m.remap = value;
      }
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) throw FormatError(where() + "expected image<TAB>mask|-<TAB>split");
    ManifestEntry e;
    e.image = fields[0];
    if (fields[1] != "-") e.mask = fields[1];
    try {
      e.split = parse_split(fields[2]);
    } catch (const FormatError& err) {
      throw FormatError(where() + err.what());
    }
    e.id = fs::path(e.image).stem().string();
    if (!ids.insert(e.id).second) throw FormatError(where() + "duplicate image id '" + e.id + "'");
    if (check_files) {
      if (!fs::exists(m.resolve(e.image))) throw NotFoundError(where() + "missing image " + m.resolve(e.image).string());
      if (e.mask && !fs::exists(m.resolve(*e.mask))) {
        throw NotFoundError(where() + "missing mask " + m.resolve(*e.mask).string());
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (m.k < 1) throw ConfigError("manifest K must be >= 1");
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  out << "# protocol: " << to_string(m.protocol) << '\n';
  out << "# K: " << m.k << '\n';
  if (m.remap) out << "# remap: " << *m.remap << '\n';
  for (const auto& e : m.entries) {
    out << e.image << '\t' << (e.mask ? *e.mask : "-") << '\t' << to_string(e.split) << '\n';
  }
  return out.str();
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << format_manifest(m);
}

// ---------------------------------------------------------------------------
// Synthetic shapes

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synthetic image count must be >= 1");
  if (classes < 1 || classes > 3) throw ConfigError("synthetic classes must be between 1 and 3 (one per shape kind)");
  if (classes >= static_cast<int>(palette.size())) throw ConfigError("palette has fewer colours than classes");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("bad shapes-per-image range");
  if (min_size < 1 || max_size < min_size || 2 * max_size >= side) throw ConfigError("bad shape size range");
  if (noise < 0.0) throw ConfigError("noise must be >= 0");
  if (val_every < 1) throw ConfigError("val_every must be >= 1");
}

bool SynthShape::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case ShapeKind::disk:
      return dx * dx + dy * dy <= size * size;
    case ShapeKind::square:
      return std::abs(dx) <= size && std::abs(dy) <= size;
    case ShapeKind::triangle: {
      // apex up at (cx, cy − s), base from (cx − s, cy + s) to (cx + s, cy + s)
      if (dy < -size || dy > size) return false;
      const double half = 0.5 * (dy + size);
      return std::abs(dx) <= half;
    }
  }
  return false;
}

SynthSample render_synthetic(const SynthConfig& config, int index) {
  config.validate();
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(index)));
  const int n = config.side;
  SynthSample s;
  s.image = Image(n, n);
  s.mask = LabelGrid::Zero(n, n);

  // low-saturation textured background: two oriented gratings on a grey base
  const double base = rng.uniform(0.35, 0.6);
  std::array<double, 3> tint;
  for (auto& t : tint) t = rng.uniform(-0.04, 0.04);
  const double f1 = rng.uniform(0.1, 0.4), f2 = rng.uniform(0.1, 0.4);
  const double a1 = rng.uniform(0.0, std::numbers::pi), a2 = rng.uniform(0.0, std::numbers::pi);
  const double p1 = rng.uniform(0.0, 2 * std::numbers::pi), p2 = rng.uniform(0.0, 2 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double t = 0.06 * std::sin(f1 * (j * std::cos(a1) + i * std::sin(a1)) + p1) +
                       0.04 * std::sin(f2 * (j * std::cos(a2) + i * std::sin(a2)) + p2);
      for (int c = 0; c < 3; ++c) s.image.channels[c](i, j) = base + tint[c] + t;
    }
  }

  const int shapes = config.min_shapes + static_cast<int>(rng.below(config.max_shapes - config.min_shapes + 1));
  for (int k = 0; k < shapes; ++k) {
    SynthShape sh;
    const int cls = k == 0 ? (index % config.classes) + 1 : 1 + static_cast<int>(rng.below(config.classes));
    sh.kind = static_cast<ShapeKind>(cls);
    sh.size = rng.uniform(config.min_size, config.max_size);
    sh.cx = rng.uniform(sh.size, n - sh.size);
    sh.cy = rng.uniform(sh.size, n - sh.size);
    std::array<double, 3> colour = config.palette[cls];
    for (auto& c : colour) c = std::clamp(c + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!sh.contains(j + 0.5, i + 0.5)) continue;
        s.mask(i, j) = cls;
        for (int c = 0; c < 3; ++c) s.image.channels[c](i, j) = colour[c];
      }
    }
    s.shapes.push_back(sh);
  }

  if (config.noise > 0.0) {
    for (auto& ch : s.image.channels)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) ch(i, j) += config.noise * rng.normal();
  }
  for (auto& ch : s.image.channels) ch = ch.cwiseMax(0.0).cwiseMin(1.0);
  return s;
}

DatasetManifest generate_synthetic(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  DatasetManifest m;
  m.protocol = Protocol::things_only;
  m.k = config.classes;
  m.base_dir = out_dir;
  for (int i = 0; i < config.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d", i);
    const SynthSample s = render_synthetic(config, i);
    ManifestEntry e;
    e.id = name;
    e.image = std::string("images/") + name + ".png";
    e.mask = std::string("masks/") + name + ".png";
    e.split = (i % config.val_every == config.val_every - 1) ? Split::val : Split::train;
    write_image(s.image, out_dir / e.image);
    write_mask(s.mask, out_dir / *e.mask);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace tfgu
