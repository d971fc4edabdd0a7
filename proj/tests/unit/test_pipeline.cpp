#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tfgu/pipeline.hpp"

using namespace tfgu;
namespace fs = std::filesystem;

namespace {

// One synthetic dataset shared by the cases below.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "tfgu_pipeline_data";
    fs::remove_all(d);
    cmd_synth(SynthConfig{}, d);
    return d;
  }();
  return dir;
}

RunConfig small_run(const std::string& name) {
  RunConfig c;
  c.manifest = (dataset() / "manifest.tsv").string();
  c.output_dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(c.output_dir);
  c.betas = {0.5};
  c.rounds = 2;
  c.train.epochs = 1;
  return c;
}

}  // namespace

TEST_CASE("mine yields nine crops per image and is reproducible") {
  const RunConfig c = small_run("tfgu_pipe_mine");
  const MineSummary a = cmd_mine(c);
  CHECK(a.images == 60);
  CHECK(a.crops == 540);
  CHECK(a.foreground + a.background + a.neutral == 540);
  const MineSummary b = cmd_mine(c);
  CHECK(a.checksum == b.checksum);
  const CropStore s = CropStore::from_archive(WeightArchive::load(Workspace(c.output_dir).crops()),
                                              load_manifest(c.manifest));
  CHECK(s.features.rows() == 540);
  CHECK(s.rects[0].image_id == "synth_0000");
}

TEST_CASE("stages report missing inputs") {
  RunConfig c = small_run("tfgu_pipe_missing");
  CHECK_THROWS_AS(cmd_cluster(c), MissingArtifactError);
  CHECK_THROWS_AS(cmd_pseudo(c), MissingArtifactError);
  try {
    cmd_train(c);
    FAIL("expected a missing artifact");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("transfgu pseudo") != std::string::npos);
  }
  c.manifest = "/nonexistent/manifest.tsv";
  CHECK_THROWS_AS(cmd_mine(c), MissingArtifactError);
  c = small_run("tfgu_pipe_missing");
  c.encoder_weights = "/nonexistent/weights.tfgu";
  CHECK_THROWS_AS(cmd_mine(c), MissingArtifactError);
}

TEST_CASE("empty manifest is an explicit error") {
  const fs::path d = fs::temp_directory_path() / "tfgu_pipe_empty";
  fs::create_directories(d);
  {
    std::ofstream out(d / "manifest.tsv");
    out << "# protocol: things_only\n# K: 3\n";
  }
  RunConfig c = small_run("tfgu_pipe_empty_run");
  c.manifest = (d / "manifest.tsv").string();
  try {
    cmd_mine(c);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("no images") != std::string::npos);
  }
  fs::remove_all(d);
}

TEST_CASE("stages run end to end") {
  const RunConfig c = small_run("tfgu_pipe_full");
  const Workspace ws(c.output_dir);
  cmd_mine(c);
  const ConceptBank bank = cmd_cluster(c);
  CHECK(bank.k() == 3);
  CHECK(cmd_pseudo(c) == 60);
  const LabelBank labels(ws.labels());
  const PseudoLabel l = labels.get("synth_0000");
  CHECK(l.bg);
  CHECK(l.label.rows() == 64);
  CHECK(l.label.maxCoeff() <= 3);

  const TrainSummary t = cmd_train(c);
  CHECK(t.rounds.size() == 2);
  CHECK(fs::exists(ws.decoder(1)));
  CHECK(fs::exists(ws.decoder(2)));
  CHECK(fs::exists(ws.final_decoder()));
  std::ifstream metrics(ws.metrics());
  int lines = 0;
  for (std::string line; std::getline(metrics, line);) ++lines;
  CHECK(lines == 3);

  const EvalReport r = cmd_eval(c);
  CHECK(fs::exists(ws.eval_report()));
  CHECK(r.miou >= 0.0);
  CHECK(r.miou <= 1.0);
  CHECK(r.miou == doctest::Approx(t.rounds.back().miou));

  // ground truth as predictions
  const EvalReport gt = cmd_eval(c, EvalSource::decoder, dataset() / "masks", fs::path(c.output_dir) / "gt.json");
  CHECK(gt.miou == 1.0);
  CHECK(gt.pixel_acc == 1.0);

  CHECK(cmd_viz(c, {"synth_0001"}) == 3);
  CHECK(fs::exists(ws.viz() / "synth_0001_cam2.png"));
  CHECK(fs::exists(ws.viz() / "synth_0001_panel.png"));
  CHECK_THROWS(cmd_viz(c, {"no_such_image"}));

  // the pseudo labels themselves can be scored
  const EvalReport p = cmd_eval(c, EvalSource::pseudo, std::nullopt, fs::path(c.output_dir) / "pseudo.json");
  CHECK(p.total == r.total);
}

TEST_CASE("shipped synthetic run improves over its pseudo labels round by round") {
  RunConfig c = RunConfig::load(fs::path(TFGU_SOURCE_DIR) / "configs" / "synthetic.json");
  c.manifest = (dataset() / "manifest.tsv").string();
  c.output_dir = (fs::temp_directory_path() / "tfgu_pipe_rounds").string();
  fs::remove_all(c.output_dir);
  const TrainSummary t = run_pipeline(c);
  REQUIRE(t.rounds.size() == 3);
  for (const auto& r : t.rounds) CHECK(r.miou >= t.initial.miou);
  for (std::size_t i = 1; i < t.rounds.size(); ++i) CHECK(t.rounds[i].miou >= t.rounds[i - 1].miou - 0.02);
  fs::remove_all(c.output_dir);
}

TEST_CASE("feature cache location follows the environment") {
  const Workspace ws("/tmp/some_run");
  ::unsetenv("TRANSFGU_CACHE");
  CHECK(ws.cache() == fs::path("/tmp/some_run/cache"));
  ::setenv("TRANSFGU_CACHE", "/tmp/elsewhere", 1);
  CHECK(ws.cache() == fs::path("/tmp/elsewhere"));
  ::unsetenv("TRANSFGU_CACHE");
}
