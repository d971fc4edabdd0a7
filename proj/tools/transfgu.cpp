// transfgu: command-line driver for the segmentation pipeline.
//
//   transfgu synth   --out data/               synthetic shapes dataset
//   transfgu mine    --config run.json         crop features
//   transfgu cluster --config run.json         concept bank
//   transfgu pseudo  --config run.json         pseudo-label bank
//   transfgu train   --config run.json         bootstrapped decoder
//   transfgu eval    --config run.json         EvalReport
//   transfgu viz     --config run.json --id x  image/label/CAM rasters
//   transfgu run     --config run.json         all of the above in order
//
// Exit codes: 0 ok, 1 other error, 2 config error, 3 missing artifact,
// 4 numeric failure.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "tfgu/pipeline.hpp"

namespace {

using namespace tfgu;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool need_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "run config (JSON)");
  if (need_config) opt->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "override the output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void print_report(const EvalReport& r) {
  std::printf("mIoU %.4f  pixel accuracy %.4f\n", r.miou, r.pixel_acc);
}

int run(int argc, char** argv) {
  CLI::App app{"transfgu: unsupervised semantic segmentation from class-token concepts"};
  app.require_subcommand(1);

  Common common;

  SynthConfig synth;
  std::string synth_out = "synthetic";
  auto* c_synth = app.add_subcommand("synth", "write the synthetic shapes dataset");
  c_synth->add_option("--out", synth_out, "output directory")->required();
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--count", synth.count, "number of images");
  c_synth->add_option("--side", synth.side, "image side in pixels");
  c_synth->add_option("--classes", synth.classes, "shape classes (1-3)");
  c_synth->add_option("--noise", synth.noise, "pixel noise amplitude");
  c_synth->add_option("--val-every", synth.val_every, "every n-th image goes to the val split");

  auto* c_mine = app.add_subcommand("mine", "extract crop class features");
  add_common(c_mine, common);
  auto* c_cluster = app.add_subcommand("cluster", "discover the concept bank");
  add_common(c_cluster, common);
  auto* c_pseudo = app.add_subcommand("pseudo", "build the pseudo-label bank");
  add_common(c_pseudo, common);
  auto* c_train = app.add_subcommand("train", "train the decoder with bootstrapping");
  add_common(c_train, common);

  auto* c_eval = app.add_subcommand("eval", "Hungarian-matched evaluation on the val split");
  add_common(c_eval, common);
  std::string source = "decoder", pred_dir, report;
  c_eval->add_option("--source", source, "decoder or pseudo")->check(CLI::IsMember({"decoder", "pseudo"}));
  c_eval->add_option("--pred-dir", pred_dir, "score <id>.png prediction rasters from this directory");
  c_eval->add_option("--report", report, "report path (default <out>/eval.json)");

  auto* c_viz = app.add_subcommand("viz", "write image, label and CAM rasters");
  add_common(c_viz, common);
  std::vector<std::string> ids;
  c_viz->add_option("--id", ids, "image ids (default: first val image)");

  auto* c_run = app.add_subcommand("run", "mine, cluster, pseudo, train and eval");
  add_common(c_run, common);

  CLI11_PARSE(app, argc, argv);

  if (c_synth->parsed()) {
    const DatasetManifest m = cmd_synth(synth, synth_out);
    std::printf("wrote %zu images to %s\n", m.entries.size(), synth_out.c_str());
    return 0;
  }
  const RunConfig cfg = resolve(common);
  if (c_mine->parsed()) {
    const MineSummary s = cmd_mine(cfg);
    std::printf("%zu images, %zu crops (%zu fg, %zu bg, %zu neutral), store crc %08x\n", s.images, s.crops,
                s.foreground, s.background, s.neutral, s.checksum);
  } else if (c_cluster->parsed()) {
    const ConceptBank b = cmd_cluster(cfg);
    std::printf("%d concepts\n", b.k());
  } else if (c_pseudo->parsed()) {
    std::printf("%zu pseudo labels\n", cmd_pseudo(cfg));
  } else if (c_train->parsed() || c_run->parsed()) {
    const TrainSummary s = c_run->parsed() ? run_pipeline(cfg) : cmd_train(cfg);
    std::printf("round 0 (pseudo labels): mIoU %.4f\n", s.initial.miou);
    for (const auto& r : s.rounds) std::printf("round %d: mIoU %.4f  loss %.4f\n", r.round, r.miou, r.losses.total);
  } else if (c_eval->parsed()) {
    std::optional<std::filesystem::path> pd, rp;
    if (!pred_dir.empty()) pd = pred_dir;
    if (!report.empty()) rp = report;
    print_report(cmd_eval(cfg, source == "pseudo" ? EvalSource::pseudo : EvalSource::decoder, pd, rp));
  } else if (c_viz->parsed()) {
    std::printf("%zu CAM rasters\n", cmd_viz(cfg, ids));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tfgu::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const tfgu::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const tfgu::NotFoundError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const tfgu::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
