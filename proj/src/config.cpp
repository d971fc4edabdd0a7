#include "tfgu/config.hpp"

#include <fstream>
#include <set>

namespace tfgu {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    return Section(j_.at(key), path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where() + "unknown key '" + k + "'");
    }
  }

 private:
  std::string where() const { return "config " + (path_.empty() ? std::string("root") : path_) + ": "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_augment(Section s, AugmentConfig& a) {
  s.get("min_scale", a.min_scale);
  s.get("flip_prob", a.flip_prob);
  s.get("jitter_prob", a.jitter_prob);
  s.get("brightness", a.brightness);
  s.get("contrast", a.contrast);
  s.get("saturation", a.saturation);
  s.get("grayscale_prob", a.grayscale_prob);
  s.get("blur_prob", a.blur_prob);
  s.get("blur_sigma_min", a.blur_sigma_min);
  s.get("blur_sigma_max", a.blur_sigma_max);
  s.finish();
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("manifest", c.manifest);
  root.get("output_dir", c.output_dir);
  root.get("seed", c.seed);
  std::optional<std::string> protocol;
  root.get("protocol", protocol);
  if (protocol) c.protocol = parse_protocol(*protocol);
  root.get("image_height", c.image_height);
  root.get("image_width", c.image_width);

  if (auto e = root.child("encoder")) {
    e->get("weights", c.encoder_weights);
    e->get("image_size", c.encoder.image_size);
    e->get("patch_size", c.encoder.patch_size);
    e->get("depth", c.encoder.depth);
    e->get("embed_dim", c.encoder.embed_dim);
    e->get("attn_dim", c.encoder.attn_dim);
    e->get("heads", c.encoder.heads);
    e->get("mlp_dim", c.encoder.mlp_dim);
    e->get("seed", c.encoder.seed);
    e->finish();
  }
  if (auto s = root.child("concepts")) {
    s->get("K", c.k);
    s->get("K_fg", c.k_fg);
    s->get("K_bg", c.k_bg);
    s->get("betas", c.betas);
    s->get("fg_threshold", c.fg_threshold);
    s->get("bg_threshold", c.bg_threshold);
    s->get("kmeans_restarts", c.kmeans.restarts);
    s->get("kmeans_max_iter", c.kmeans.max_iter);
    s->get("kmeans_tol", c.kmeans.tol);
    s->finish();
  }
  if (auto s = root.child("pseudo")) {
    s->get("bg_threshold", c.bg_response_threshold);
    s->finish();
  }
  if (auto s = root.child("decoder")) {
    s->get("layers", c.decoder.layers);
    s->get("embed_dim", c.decoder.embed_dim);
    s->get("heads", c.decoder.heads);
    s->get("mlp_dim", c.decoder.mlp_dim);
    s->get("seed", c.decoder.seed);
    s->finish();
  }
  if (auto s = root.child("train")) {
    s->get("rounds", c.rounds);
    s->get("epochs", c.train.epochs);
    s->get("batch_size", c.train.batch_size);
    s->get("lr", c.train.lr);
    s->get("omega1", c.train.weights.omega1);
    s->get("omega2", c.train.weights.omega2);
    s->get("alpha_start", c.train.weights.alpha_start);
    s->get("alpha_end", c.train.weights.alpha_end);
    if (auto a = s->child("augment")) read_augment(*a, c.train.augment);
    s->finish();
  }
  if (auto s = root.child("eval")) {
    s->get("gt_classes", c.gt_classes);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  // relative manifest paths are relative to the config file
  if (!c.manifest.empty() && std::filesystem::path(c.manifest).is_relative()) {
    c.manifest = (path.parent_path() / c.manifest).lexically_normal().string();
  }
  return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["manifest"] = manifest;
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  if (protocol) j["protocol"] = to_string(*protocol);
  j["image_height"] = image_height;
  j["image_width"] = image_width;
  auto& e = j["encoder"];
  e["weights"] = encoder_weights ? json(*encoder_weights) : json(nullptr);
  e["image_size"] = encoder.image_size;
  e["patch_size"] = encoder.patch_size;
  e["depth"] = encoder.depth;
  e["embed_dim"] = encoder.embed_dim;
  e["attn_dim"] = encoder.attn_dim;
  e["heads"] = encoder.heads;
  e["mlp_dim"] = encoder.mlp_dim;
  e["seed"] = encoder.seed;
  auto& s = j["concepts"];
  s["K"] = k ? json(*k) : json(nullptr);
  s["K_fg"] = k_fg ? json(*k_fg) : json(nullptr);
  s["K_bg"] = k_bg ? json(*k_bg) : json(nullptr);
  s["betas"] = betas;
  s["fg_threshold"] = fg_threshold;
  s["bg_threshold"] = bg_threshold;
  s["kmeans_restarts"] = kmeans.restarts;
  s["kmeans_max_iter"] = kmeans.max_iter;
  s["kmeans_tol"] = kmeans.tol;
  j["pseudo"]["bg_threshold"] = bg_response_threshold;
  auto& d = j["decoder"];
  d["layers"] = decoder.layers;
  d["embed_dim"] = decoder.embed_dim;
  d["heads"] = decoder.heads;
  d["mlp_dim"] = decoder.mlp_dim;
  d["seed"] = decoder.seed;
  auto& t = j["train"];
  t["rounds"] = rounds;
  t["epochs"] = train.epochs;
  t["batch_size"] = train.batch_size;
  t["lr"] = train.lr;
  t["omega1"] = train.weights.omega1;
  t["omega2"] = train.weights.omega2;
  t["alpha_start"] = train.weights.alpha_start;
  t["alpha_end"] = train.weights.alpha_end;
  const auto& a = train.augment;
  t["augment"] = {{"min_scale", a.min_scale},       {"flip_prob", a.flip_prob},
                  {"jitter_prob", a.jitter_prob},   {"brightness", a.brightness},
                  {"contrast", a.contrast},         {"saturation", a.saturation},
                  {"grayscale_prob", a.grayscale_prob}, {"blur_prob", a.blur_prob},
                  {"blur_sigma_min", a.blur_sigma_min}, {"blur_sigma_max", a.blur_sigma_max}};
  j["eval"]["gt_classes"] = gt_classes ? json(*gt_classes) : json(nullptr);
  return j;
}

void RunConfig::validate() const {
  encoder.validate();
  const int step = 2 * encoder.patch_size;
  if (image_height < step || image_width < step || image_height % step != 0 || image_width % step != 0) {
    throw ConfigError("image_height and image_width must be positive multiples of 2*patch_size (" +
                      std::to_string(step) + ")");
  }
  if (betas.empty()) throw ConfigError("betas must not be empty");
  for (double b : betas) {
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("every beta must lie in (0, 1]");
  }
  check_prob(fg_threshold, "fg_threshold");
  check_prob(bg_threshold, "bg_threshold");
  check_prob(bg_response_threshold, "pseudo.bg_threshold");
  if (kmeans.restarts < 1 || kmeans.max_iter < 1 || kmeans.tol < 0.0) throw ConfigError("bad k-means options");
  if (k && *k < 1) throw ConfigError("K must be >= 1");
  if ((k_fg && *k_fg < 0) || (k_bg && *k_bg < 0)) throw ConfigError("K_fg and K_bg must be >= 0");
  if (decoder.layers < 1 || decoder.heads < 1 || decoder.embed_dim % decoder.heads != 0 || decoder.mlp_dim < 1) {
    throw ConfigError("bad decoder shape");
  }
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (train.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(train.lr > 0.0)) throw ConfigError("lr must be > 0");
  const auto& w = train.weights;
  if (w.omega1 < 0 || w.omega2 < 0 || w.alpha_start < 0 || w.alpha_end < 0) {
    throw ConfigError("loss weights must be >= 0");
  }
  const auto& a = train.augment;
  if (!(a.min_scale > 0.0 && a.min_scale <= 1.0)) throw ConfigError("augment.min_scale must lie in (0, 1]");
  check_prob(a.flip_prob, "augment.flip_prob");
  check_prob(a.jitter_prob, "augment.jitter_prob");
  check_prob(a.grayscale_prob, "augment.grayscale_prob");
  check_prob(a.blur_prob, "augment.blur_prob");
  if (a.blur_sigma_min <= 0.0 || a.blur_sigma_max < a.blur_sigma_min) throw ConfigError("bad blur sigma range");
  if (gt_classes && *gt_classes < 1) throw ConfigError("gt_classes must be >= 1");
}

RunConfig::ConceptCounts RunConfig::concept_counts(Protocol p, int manifest_k) const {
  ConceptCounts c;
  c.k = k.value_or(manifest_k);
  switch (p) {
    case Protocol::things_only:
      if (k_bg && *k_bg != 0) throw ConfigError("things_only runs have no background concepts (K_bg must be 0)");
      if (k_fg && *k_fg != c.k) throw ConfigError("things_only runs need K_fg = K");
      c.k_fg = c.k;
      c.k_bg = 0;
      break;
    case Protocol::things_and_stuff:
      if (k_fg && k_bg) {
        if (*k_fg + *k_bg != c.k) {
          throw ConfigError("K (" + std::to_string(c.k) + ") must equal K_fg + K_bg (" + std::to_string(*k_fg) +
                            " + " + std::to_string(*k_bg) + ")");
        }
        c.k_fg = k_fg;
        c.k_bg = k_bg;
      } else if (k_fg || k_bg) {
        const int given = k_fg ? *k_fg : *k_bg;
        if (given > c.k) throw ConfigError("K_fg/K_bg exceeds K");
        c.k_fg = k_fg ? *k_fg : c.k - given;
        c.k_bg = k_bg ? *k_bg : c.k - given;
      }
      break;
    case Protocol::no_fg_bg:
      if (k_fg || k_bg) throw ConfigError("no_fg_bg runs take a single K (K_fg/K_bg must be unset)");
      c.k_fg = c.k;
      c.k_bg = 0;
      break;
  }
  return c;
}

void RunConfig::validate_against(Protocol p, int manifest_k) const {
  validate();
  (void)concept_counts(p, manifest_k);
}

}  // namespace tfgu
