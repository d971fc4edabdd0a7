#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "tfgu/archive.hpp"
#include "tfgu/datasets.hpp"

using namespace tfgu;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void touch_mask(const fs::path& p) { write_mask(LabelGrid::Zero(4, 4), p); }

}  // namespace

TEST_CASE("manifest parsing") {
  const fs::path dir = fresh_dir("tfgu_manifest_test");
  write_image(Image(4, 4, 0.5), dir / "a.png");
  write_image(Image(4, 4, 0.5), dir / "b.png");
  touch_mask(dir / "a_mask.png");

  const std::string text =
      "# protocol: things_and_stuff\n"
      "# K: 5\n"
      "a.png\ta_mask.png\ttrain\n"
      "\n"
      "b.png\t-\tval\n";
  const DatasetManifest m = parse_manifest(text, dir);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.protocol == Protocol::things_and_stuff);
  CHECK(m.k == 5);
  CHECK(m.entries[0].id == "a");
  CHECK(m.entries[0].mask == std::optional<std::string>("a_mask.png"));
  CHECK_FALSE(m.entries[1].mask);
  CHECK(m.split(Split::val).size() == 1);
  CHECK(m.resolve("a.png") == dir / "a.png");

  // round-trip through the text form
  save_manifest(m, dir / "m.tsv");
  CHECK(load_manifest(dir / "m.tsv") == m);
  CHECK(parse_manifest(format_manifest(m), dir) == m);
  fs::remove_all(dir);
}

TEST_CASE("manifest errors") {
  const fs::path dir = fresh_dir("tfgu_manifest_err");
  write_image(Image(4, 4, 0.5), dir / "a.png");

  try {
    parse_manifest("a.png\tmissing_mask.png\ttrain\n", dir);
    FAIL("expected not-found");
  } catch (const NotFoundError& e) {
    CHECK(std::string(e.what()).find("missing_mask.png") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest("a.png\t-\ttrain\na.png\t-\tval\n", dir), FormatError);
  CHECK_THROWS_AS(parse_manifest("a.png\t-\ttest\n", dir), FormatError);
  CHECK_THROWS_AS(parse_manifest("# K: 0\na.png\t-\ttrain\n", dir), ConfigError);
  CHECK_THROWS_AS(parse_manifest("a.png\ttrain\n", dir), FormatError);
  CHECK_NOTHROW(parse_manifest("x.png\t-\ttrain\n", dir, false));
  fs::remove_all(dir);
}

TEST_CASE("mask raster round-trip") {
  const fs::path dir = fresh_dir("tfgu_mask_test");
  LabelGrid g(5, 7);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = static_cast<int>(i * 7 % 20);
  g(2, 3) = kIgnoreLabel;
  write_mask(g, dir / "m.png");
  CHECK(read_mask(dir / "m.png") == g);
  const auto bytes = read_file(dir / "m.png");
  write_mask(read_mask(dir / "m.png"), dir / "m2.png");
  CHECK(read_file(dir / "m2.png") == bytes);
  CHECK_THROWS_AS(write_mask(LabelGrid::Constant(1, 1, 300), dir / "bad.png"), FormatError);
  CHECK_THROWS_AS(read_mask(dir / "absent.png"), NotFoundError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation is deterministic") {
  const fs::path a = fresh_dir("tfgu_synth_a"), b = fresh_dir("tfgu_synth_b");
  SynthConfig c;
  c.count = 6;
  generate_synthetic(c, a);
  generate_synthetic(c, b);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    CHECK(read_file(e.path()) == read_file(b / rel));
  }
  const DatasetManifest m = load_manifest(a / "manifest.tsv");
  CHECK(m.entries.size() == 6);
  CHECK(m.k == 3);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("every class appears in both splits") {
  SynthConfig c;
  std::set<int> train, val;
  for (int i = 0; i < c.count; ++i) {
    const SynthSample s = render_synthetic(c, i);
    const bool is_val = i % c.val_every == c.val_every - 1;
    for (Eigen::Index p = 0; p < s.mask.size(); ++p) (is_val ? val : train).insert(s.mask(p));
  }
  for (int k = 1; k <= 3; ++k) {
    CHECK(train.count(k) == 1);
    CHECK(val.count(k) == 1);
  }
}

TEST_CASE("disk footprint matches the analytic area") {
  SynthConfig c;
  c.noise = 0.0;
  c.max_shapes = 1;
  int checked = 0;
  for (int i = 0; i < c.count; ++i) {
    const SynthSample s = render_synthetic(c, i);
    REQUIRE(s.shapes.size() == 1);
    if (s.shapes[0].kind != ShapeKind::disk) continue;
    const double r = s.shapes[0].size;
    const auto count = (s.mask.array() == 1).count();
    // any pixel whose centre and footprint disagree lies within √2/2 of the rim
    CHECK(std::abs(count - std::numbers::pi * r * r) <= 2.0 * std::numbers::sqrt2 * std::numbers::pi * r);
    // independent pixel-centre scan
    long inside = 0;
    for (int y = 0; y < c.side; ++y)
      for (int x = 0; x < c.side; ++x) {
        const double dx = x + 0.5 - s.shapes[0].cx, dy = y + 0.5 - s.shapes[0].cy;
        if (dx * dx + dy * dy <= r * r) ++inside;
      }
    CHECK(count == inside);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("synthetic config validation") {
  SynthConfig c;
  c.classes = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_size = 40;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.val_every = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("protocol and split tags") {
  for (Protocol p : {Protocol::things_only, Protocol::things_and_stuff, Protocol::no_fg_bg})
    CHECK(parse_protocol(to_string(p)) == p);
  CHECK(parse_split("val") == Split::val);
  CHECK_THROWS(parse_protocol("stuff"));
}
