#include "tfgu/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "tfgu/training.hpp"

namespace tfgu {

namespace fs = std::filesystem;

fs::path Workspace::cache() const {
  if (const char* env = std::getenv("TRANSFGU_CACHE"); env && *env) return fs::path(env);
  return root / "cache";
}

namespace {

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t image_crc(const Image& img) {
  std::vector<std::uint8_t> bytes;
  for (const auto& c : img.channels) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(c.data());
    bytes.insert(bytes.end(), p, p + c.size() * sizeof(double));
  }
  return crc32(bytes);
}

Matrix round_f32(const Matrix& m) { return m.unaryExpr([](double v) { return round_to(DType::f32, v); }); }

void require(const fs::path& p, const char* stage) {
  if (!fs::exists(p)) {
    throw MissingArtifactError("missing " + p.string() + "; run `transfgu " + stage + "` first");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

const ManifestEntry& find_entry(const DatasetManifest& m, const std::string& id) {
  for (const auto& e : m.entries) {
    if (e.id == id) return e;
  }
  throw NotFoundError("image id '" + id + "' is not in the manifest");
}

LabelGrid argmax_labels(const Stack& probs) { return argmax_channels(probs); }

}  // namespace

// ---------------------------------------------------------------------------
// CropStore

WeightArchive CropStore::to_archive() const {
  const auto n = features.rows();
  Matrix groups_m(n, 1), rects_m(n, 4), index_m(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    groups_m(i, 0) = static_cast<double>(groups[i]);
    rects_m.row(i) << rects[i].x, rects[i].y, rects[i].side, rects[i].beta;
    index_m(i, 0) = image_index[i];
  }
  WeightArchive a;
  a.add("crops.features", features);
  a.add("crops.groups", groups_m);
  a.add("crops.rects", rects_m);
  a.add("crops.image_index", index_m);
  return a;
}

CropStore CropStore::from_archive(const WeightArchive& a, const DatasetManifest& manifest) {
  CropStore s;
  s.features = a.at("crops.features").as_matrix();
  const Matrix g = a.at("crops.groups").as_matrix();
  const Matrix r = a.at("crops.rects").as_matrix();
  const Matrix idx = a.at("crops.image_index").as_matrix();
  const auto n = s.features.rows();
  if (g.rows() != n || r.rows() != n || idx.rows() != n || r.cols() != 4) throw FormatError("inconsistent crop store");
  for (Eigen::Index i = 0; i < n; ++i) {
    const int code = static_cast<int>(g(i, 0));
    if (code < 0 || code > 2) throw FormatError("bad crop group code");
    s.groups.push_back(static_cast<CropGroup>(code));
    const int ii = static_cast<int>(idx(i, 0));
    if (ii < 0 || ii >= static_cast<int>(manifest.entries.size())) throw FormatError("crop store does not match the manifest");
    s.image_index.push_back(ii);
    s.rects.push_back({static_cast<int>(r(i, 0)), static_cast<int>(r(i, 1)), static_cast<int>(r(i, 2)), r(i, 3),
                       manifest.entries[ii].id});
  }
  return s;
}

// ---------------------------------------------------------------------------
// RunContext

RunContext RunContext::open(const RunConfig& config) {
  config.validate();
  if (config.manifest.empty()) throw ConfigError("config has no manifest path");
  if (!fs::exists(config.manifest)) throw MissingArtifactError("missing manifest " + config.manifest);
  DatasetManifest manifest = load_manifest(config.manifest);
  const Protocol protocol = config.protocol.value_or(manifest.protocol);
  config.validate_against(protocol, manifest.k);

  EncoderModel encoder;
  if (config.encoder_weights) {
    fs::path w = *config.encoder_weights;
    if (!fs::exists(w)) throw MissingArtifactError("missing encoder weights " + w.string());
    const WeightArchive a = WeightArchive::load(w);
    encoder = EncoderModel::load(config.encoder, &a);
  } else {
    encoder = EncoderModel::load(config.encoder);
  }
  return RunContext{config, std::move(manifest), protocol, std::move(encoder), Workspace(config.output_dir)};
}

Image RunContext::working_image(const ManifestEntry& e) const {
  Image img = read_image(manifest.resolve(e.image));
  if (img.height() != config.image_height || img.width() != config.image_width) {
    img = resize_bilinear(img, config.image_height, config.image_width);
  }
  return img;
}

std::optional<LabelGrid> RunContext::gt_mask(const ManifestEntry& e) const {
  if (!e.mask) return std::nullopt;
  LabelGrid m = read_mask(manifest.resolve(*e.mask));
  if (manifest.remap) m = remap_labels(m, load_remap_table(manifest.resolve(*manifest.remap)));
  return m;
}

FeatureBundle RunContext::features(const ManifestEntry& e) const {
  const Image img = working_image(e);
  const fs::path dir = workspace.cache() / ("enc_" + hex32(nn::checksum(encoder.params())));
  const fs::path file = dir / (e.id + "_" + hex32(image_crc(img)) + ".tfgu");
  FeatureBundle f;
  if (fs::exists(file)) {
    try {
      const WeightArchive a = WeightArchive::load(file);
      f.cls = a.at("cls").as_matrix().transpose();
      f.patch = a.at("patch").as_matrix();
      f.cls_attention = a.at("cls_attention").as_matrix();
      f.grid_h = static_cast<int>(f.cls_attention.rows());
      f.grid_w = static_cast<int>(f.cls_attention.cols());
      return f;
    } catch (const Error&) {
      // stale or corrupt entry: recompute below
    }
  }
  f = encoder.encode(img);
  f.cls = round_f32(f.cls);
  f.patch = round_f32(f.patch);
  f.cls_attention = round_f32(f.cls_attention);
  WeightArchive a;
  a.add("cls", Matrix(f.cls.transpose()));
  a.add("patch", f.patch);
  a.add("cls_attention", f.cls_attention);
  a.save(file);
  return f;
}

int RunContext::gt_classes() const {
  if (config.gt_classes) return *config.gt_classes;
  int top = -1;
  for (const auto& e : manifest.entries) {
    const auto m = gt_mask(e);
    if (!m) continue;
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const int v = (*m)(i);
      if (v != kIgnoreLabel) top = std::max(top, v);
    }
  }
  if (top < 0) throw ConfigError("no ground-truth masks to derive the class count from");
  return top + 1;
}

DecoderConfig RunContext::decoder_config(int classes) const {
  DecoderConfig d = config.decoder;
  d.input_dim = encoder.config().embed_dim;
  d.classes = classes;
  d.seed = derive_seed(config.seed, d.seed);
  return d;
}

// ---------------------------------------------------------------------------
// Stages

MineSummary cmd_mine(const RunConfig& config) {
  const RunContext ctx = RunContext::open(config);
  if (ctx.manifest.entries.empty()) throw ConfigError("manifest " + config.manifest + " lists no images");
  const bool grouped = ctx.protocol != Protocol::no_fg_bg;
  CropStore store;
  std::vector<Vector> feats;
  MineSummary sum;
  for (std::size_t i = 0; i < ctx.manifest.entries.size(); ++i) {
    const ManifestEntry& e = ctx.manifest.entries[i];
    const Image img = ctx.working_image(e);
    std::optional<ForegroundPrior> prior;
    if (grouped) prior = binarize_attention(ctx.features(e).cls_attention);
    for (const CropRect& r : generate_windows(img.height(), img.width(), config.betas, e.id)) {
      const CropGroup g = prior ? classify_patch(r, *prior, img.height(), img.width(), config.fg_threshold,
                                                 config.bg_threshold)
                                : CropGroup::foreground;
      const FeatureBundle f = ctx.encoder.encode(crop_resize(img, r));
      if (!f.cls.allFinite()) throw NumericError("encoder produced non-finite features for " + e.id);
      feats.push_back(f.cls);
      store.groups.push_back(g);
      store.rects.push_back(r);
      store.image_index.push_back(static_cast<int>(i));
      if (g == CropGroup::foreground) ++sum.foreground;
      if (g == CropGroup::background) ++sum.background;
      if (g == CropGroup::neutral) ++sum.neutral;
    }
    ++sum.images;
  }
  store.features.resize(static_cast<Eigen::Index>(feats.size()), ctx.encoder.config().embed_dim);
  for (std::size_t i = 0; i < feats.size(); ++i) store.features.row(i) = feats[i].transpose();
  sum.crops = feats.size();
  const auto bytes = store.to_archive().to_bytes();
  write_file(ctx.workspace.crops(), bytes);
  sum.checksum = crc32(bytes);
  return sum;
}

ConceptBank cmd_cluster(const RunConfig& config) {
  const RunContext ctx = RunContext::open(config);
  require(ctx.workspace.crops(), "mine");
  const CropStore store = CropStore::from_archive(WeightArchive::load(ctx.workspace.crops()), ctx.manifest);
  const auto counts = config.concept_counts(ctx.protocol, ctx.manifest.k);

  std::vector<Eigen::Index> fg_rows, bg_rows;
  for (std::size_t i = 0; i < store.groups.size(); ++i) {
    if (store.groups[i] == CropGroup::foreground) fg_rows.push_back(static_cast<Eigen::Index>(i));
    if (store.groups[i] == CropGroup::background) bg_rows.push_back(static_cast<Eigen::Index>(i));
  }
  GroupedFeatures g;
  g.foreground = store.features(fg_rows, Eigen::all);
  g.background = store.features(bg_rows, Eigen::all);

  int k_fg = 0, k_bg = 0;
  if (counts.k_fg && counts.k_bg) {
    k_fg = *counts.k_fg;
    k_bg = *counts.k_bg;
  } else {
    std::tie(k_fg, k_bg) = proportional_split(counts.k, g.foreground.rows(), g.background.rows());
  }
  const ConceptBank bank =
      discover(g, k_fg, k_bg, config.seed, ctx.protocol == Protocol::no_fg_bg, config.kmeans);
  WeightArchive a;
  bank.add_to(a);
  a.save(ctx.workspace.concepts());
  return bank;
}

std::size_t cmd_pseudo(const RunConfig& config) {
  const RunContext ctx = RunContext::open(config);
  require(ctx.workspace.concepts(), "cluster");
  const ConceptBank bank = ConceptBank::from_archive(WeightArchive::load(ctx.workspace.concepts()));
  fs::remove_all(ctx.workspace.labels());
  LabelBank labels(ctx.workspace.labels());

  PseudoLabelOptions opts;
  opts.fg_only = ctx.protocol == Protocol::things_only;
  opts.bg_threshold = config.bg_response_threshold;
  opts.out_rows = config.image_height;
  opts.out_cols = config.image_width;
  for (const auto& e : ctx.manifest.entries) {
    const Image img = ctx.working_image(e);
    const Stack responses = normalize_responses(gradcam_responses(ctx.encoder, img, bank));
    PseudoLabel pl = build_pseudo_label(responses, bank.roles, opts);
    pl.image_id = e.id;
    if (ctx.protocol == Protocol::things_and_stuff) pl.fg_prior = binarize_attention(ctx.features(e).cls_attention).mask;
    labels.put(pl);
  }
  return ctx.manifest.entries.size();
}

namespace {

EvalReport eval_decoder(const RunContext& ctx, const DecoderModel& decoder, int k_gt) {
  ConfusionMatrix c(decoder.config().classes, k_gt);
  for (const ManifestEntry* e : ctx.manifest.split(Split::val)) {
    const auto gt = ctx.gt_mask(*e);
    if (!gt) continue;
    const FeatureBundle f = ctx.features(*e);
    const ProbabilityMaps p = decoder.decode(f.patch, f.grid_h, f.grid_w, static_cast<int>(gt->rows()),
                                             static_cast<int>(gt->cols()));
    c.add(argmax_labels(p.full_probs), *gt);
  }
  return evaluate(c);
}

EvalReport eval_pseudo(const RunContext& ctx, const LabelBank& bank, int k_gt) {
  std::optional<ConfusionMatrix> c;
  for (const ManifestEntry* e : ctx.manifest.split(Split::val)) {
    const auto gt = ctx.gt_mask(*e);
    if (!gt) continue;
    const PseudoLabel pl = bank.get(e->id);
    if (!c) c.emplace(pl.num_classes(), k_gt);
    c->add(resize_nearest(pl.label, static_cast<int>(gt->rows()), static_cast<int>(gt->cols())), *gt);
  }
  if (!c) throw ConfigError("no val images with ground-truth masks");
  return evaluate(*c);
}

LabelBank open_bank(const Workspace& ws) {
  require(ws.labels() / "index.tsv", "pseudo");
  return LabelBank(ws.labels());
}

DecoderModel load_decoder(const RunContext& ctx, const fs::path& path) {
  require(path, "train");
  const WeightArchive a = WeightArchive::load(path);
  const Tensor& cls = a.at("cls_emb");
  if (cls.shape.empty()) throw FormatError("decoder archive has a scalar cls_emb");
  return DecoderModel::from_archive(ctx.decoder_config(static_cast<int>(cls.shape[0])), a);
}

}  // namespace

TrainSummary cmd_train(const RunConfig& config) {
  const RunContext ctx = RunContext::open(config);
  const LabelBank bank = open_bank(ctx.workspace);

  std::vector<TrainSample> samples;
  int classes = 0;
  for (const ManifestEntry* e : ctx.manifest.split(Split::train)) {
    const PseudoLabel pl = bank.get(e->id);
    classes = pl.num_classes();
    samples.push_back({e->id, ctx.working_image(*e), pl.class_stack(), pl.fg_prior});
  }
  if (samples.empty()) throw ConfigError("manifest has no train images");

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, 0x7a11);
  tc.fg_threshold = config.fg_threshold;
  tc.bg_threshold = config.bg_threshold;
  if (ctx.protocol == Protocol::things_and_stuff) {
    require(ctx.workspace.concepts(), "cluster");
    tc.channel_roles = ConceptBank::from_archive(WeightArchive::load(ctx.workspace.concepts())).roles;
  }

  const bool have_gt = [&] {
    for (const ManifestEntry* e : ctx.manifest.split(Split::val)) {
      if (e->mask) return true;
    }
    return false;
  }();
  const int k_gt = have_gt ? ctx.gt_classes() : 0;

  TrainSummary summary;
  std::string lines;
  if (have_gt) {
    summary.initial = eval_pseudo(ctx, bank, k_gt);
    nlohmann::ordered_json j;
    j["round"] = 0;
    j["source"] = "pseudo_labels";
    j["miou"] = summary.initial.miou;
    j["pixel_acc"] = summary.initial.pixel_acc;
    lines += j.dump() + "\n";
  }
  RoundEvaluator evaluator;
  if (have_gt) evaluator = [&](const DecoderModel& d) { return eval_decoder(ctx, d, k_gt); };
  const RoundCallback on_round = [&](const RoundMetrics& m, const DecoderModel& d) {
    d.to_archive().save(ctx.workspace.decoder(m.round));
    lines += m.to_jsonl() + "\n";
  };
  const BootstrapResult r =
      run_bootstrap(ctx.encoder, ctx.decoder_config(classes), samples, tc, config.rounds, evaluator, on_round);
  r.final_student().to_archive().save(ctx.workspace.final_decoder());
  write_text(ctx.workspace.metrics(), lines);
  write_text(ctx.workspace.root / "config.json", config.to_json().dump(2) + "\n");
  summary.rounds = r.rounds;
  return summary;
}

EvalReport cmd_eval(const RunConfig& config, EvalSource source, const std::optional<fs::path>& pred_dir,
                    const std::optional<fs::path>& report) {
  const RunContext ctx = RunContext::open(config);
  const int k_gt = ctx.gt_classes();
  EvalReport rep;
  if (pred_dir) {
    std::vector<LabelGrid> preds, gts;
    int k_pred = 1;
    for (const ManifestEntry* e : ctx.manifest.split(Split::val)) {
      auto gt = ctx.gt_mask(*e);
      if (!gt) continue;
      const fs::path p = *pred_dir / (e->id + ".png");
      if (!fs::exists(p)) throw MissingArtifactError("missing prediction raster " + p.string());
      LabelGrid pred = read_mask(p);
      if (pred.rows() != gt->rows() || pred.cols() != gt->cols()) {
        pred = resize_nearest(pred, static_cast<int>(gt->rows()), static_cast<int>(gt->cols()));
      }
      k_pred = std::max(k_pred, pred.maxCoeff() + 1);
      preds.push_back(std::move(pred));
      gts.push_back(std::move(*gt));
    }
    rep = evaluate(tfgu::accumulate(preds, gts, k_pred, k_gt));
  } else if (source == EvalSource::pseudo) {
    rep = eval_pseudo(ctx, open_bank(ctx.workspace), k_gt);
  } else {
    rep = eval_decoder(ctx, load_decoder(ctx, ctx.workspace.final_decoder()), k_gt);
  }
  write_text(report.value_or(ctx.workspace.eval_report()), rep.to_json() + "\n");
  return rep;
}

namespace {

std::array<double, 3> label_colour(int v) {
  static const std::array<std::array<double, 3>, 10> table = {{{0.0, 0.0, 0.0},
                                                               {0.9, 0.1, 0.1},
                                                               {0.1, 0.75, 0.2},
                                                               {0.15, 0.3, 0.95},
                                                               {0.95, 0.8, 0.1},
                                                               {0.8, 0.2, 0.8},
                                                               {0.1, 0.8, 0.8},
                                                               {1.0, 0.5, 0.0},
                                                               {0.5, 0.5, 0.5},
                                                               {0.6, 0.3, 0.1}}};
  if (v == kIgnoreLabel) return {1.0, 1.0, 1.0};
  return table[static_cast<std::size_t>(v) % table.size()];
}

Image colourize(const LabelGrid& l) {
  Image out(static_cast<int>(l.rows()), static_cast<int>(l.cols()));
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (Eigen::Index j = 0; j < l.cols(); ++j) {
      const auto c = label_colour(l(i, j));
      for (int ch = 0; ch < 3; ++ch) out.channels[ch](i, j) = c[ch];
    }
  return out;
}

// blue → cyan → yellow → red
Image heatmap(const Grid& g) {
  Image out(static_cast<int>(g.rows()), static_cast<int>(g.cols()));
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double v = std::clamp(g(i, j), 0.0, 1.0);
      out.channels[0](i, j) = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
      out.channels[1](i, j) = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
      out.channels[2](i, j) = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    }
  return out;
}

Image hconcat(const std::vector<Image>& parts, int gap = 2) {
  int w = 0;
  const int h = parts.front().height();
  for (const auto& p : parts) w += p.width() + gap;
  Image out(h, w - gap, 1.0);
  int x = 0;
  for (const auto& p : parts) {
    for (int ch = 0; ch < 3; ++ch) out.channels[ch].block(0, x, h, p.width()) = p.channels[ch];
    x += p.width() + gap;
  }
  return out;
}

}  // namespace

std::size_t cmd_viz(const RunConfig& config, const std::vector<std::string>& ids) {
  const RunContext ctx = RunContext::open(config);
  require(ctx.workspace.concepts(), "cluster");
  const ConceptBank bank = ConceptBank::from_archive(WeightArchive::load(ctx.workspace.concepts()));
  std::optional<DecoderModel> decoder;
  if (fs::exists(ctx.workspace.final_decoder())) decoder = load_decoder(ctx, ctx.workspace.final_decoder());

  std::vector<std::string> chosen = ids;
  if (chosen.empty()) {
    const auto val = ctx.manifest.split(Split::val);
    if (!val.empty()) {
      chosen.push_back(val.front()->id);
    } else if (!ctx.manifest.entries.empty()) {
      chosen.push_back(ctx.manifest.entries.front().id);
    }
  }
  PseudoLabelOptions opts;
  opts.fg_only = ctx.protocol == Protocol::things_only;
  opts.bg_threshold = config.bg_response_threshold;
  opts.out_rows = config.image_height;
  opts.out_cols = config.image_width;

  std::size_t cams = 0;
  const fs::path dir = ctx.workspace.viz();
  fs::create_directories(dir);
  for (const std::string& id : chosen) {
    const ManifestEntry& e = find_entry(ctx.manifest, id);
    const Image img = ctx.working_image(e);
    const Stack responses = normalize_responses(gradcam_responses(ctx.encoder, img, bank));
    const PseudoLabel pl = build_pseudo_label(responses, bank.roles, opts);
    std::vector<Image> panel = {img, colourize(pl.label)};
    write_image(img, dir / (id + "_image.png"));
    write_image(panel[1], dir / (id + "_label.png"));
    for (std::size_t k = 0; k < responses.size(); ++k) {
      const Image cam = heatmap(resize_bilinear(responses[k], img.height(), img.width()));
      write_image(cam, dir / (id + "_cam" + std::to_string(k) + ".png"));
      panel.push_back(cam);
      ++cams;
    }
    if (decoder) {
      const FeatureBundle f = ctx.features(e);
      const ProbabilityMaps p = decoder->decode(f.patch, f.grid_h, f.grid_w, img.height(), img.width());
      const Image pred = colourize(argmax_labels(p.full_probs));
      write_image(pred, dir / (id + "_pred.png"));
      panel.push_back(pred);
    }
    write_image(hconcat(panel), dir / (id + "_panel.png"));
  }
  return cams;
}

DatasetManifest cmd_synth(const SynthConfig& config, const fs::path& out_dir) {
  return generate_synthetic(config, out_dir);
}

TrainSummary run_pipeline(const RunConfig& config) {
  cmd_mine(config);
  cmd_cluster(config);
  cmd_pseudo(config);
  TrainSummary s = cmd_train(config);
  cmd_eval(config);
  return s;
}

std::map<std::string, std::uint32_t> artifact_checksums(const fs::path& run_dir) {
  std::map<std::string, std::uint32_t> out;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), run_dir);
    if (*rel.begin() == "cache") continue;
    out[rel.generic_string()] = crc32(read_file(entry.path()));
  }
  return out;
}

}  // namespace tfgu
