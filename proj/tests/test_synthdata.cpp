#include <filesystem>
#include <fstream>
#include <set>

#include "apseg/errors.hpp"
#include "apseg/png_io.hpp"
#include "apseg/synthdata.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace apseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("apseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("single-instance scene") {
  synth::SceneConfig c;
  c.count_min = c.count_max = 1;
  const auto s = synth::generate_scene(c, 7);
  CHECK(s.n() == 1);
  std::set<int> labels(s.instances.labels.begin(), s.instances.labels.end());
  CHECK(labels == std::set<int>{0, 1});
}

TEST_CASE("generation is deterministic") {
  synth::SceneConfig c;
  const auto a = synth::generate_scene(c, 11), b = synth::generate_scene(c, 11);
  CHECK(a.image.data == b.image.data);
  CHECK(a.instances == b.instances);
  CHECK(a.points == b.points);
  CHECK(a.classes == b.classes);
  const auto d = synth::generate_scene(c, 12);
  CHECK(d.image.data != a.image.data);
}

TEST_CASE("scene invariants hold over 100 seeds at 128x128") {
  synth::SceneConfig c;
  c.height = c.width = 128;
  c.count_min = 20;
  c.count_max = 30;
  for (std::uint64_t seed = 3; seed < 103; ++seed) {
    const auto s = synth::generate_scene(c, seed);
    REQUIRE(s.n() >= 20);
    REQUIRE(s.n() <= 30);
    // brute-force: recompute every centroid from the mask and test containment
    for (int id = 1; id <= s.n(); ++id) {
      double sx = 0, sy = 0, n = 0;
      for (int i = 0; i < 128; ++i)
        for (int j = 0; j < 128; ++j)
          if (s.instances.at(i, j) == id) {
            sx += j + 0.5;
            sy += i + 0.5;
            ++n;
          }
      REQUIRE(n > 0);
      const Point2 p = s.points[static_cast<std::size_t>(id - 1)];
      CHECK(std::abs(p.x - sx / n) < 1e-12);
      CHECK(std::abs(p.y - sy / n) < 1e-12);
      CHECK(s.instances.at(static_cast<int>(p.y), static_cast<int>(p.x)) == id);
      CHECK(s.instances.class_of.at(id) == s.classes[static_cast<std::size_t>(id - 1)]);
    }
    for (double v : s.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK_NOTHROW(synth::check_scene(s, 4));
  }
}

TEST_CASE("class appearance differs by class") {
  synth::SceneConfig c;
  const auto scenes = synth::generate_scenes(c, 30, 100);
  std::map<int, std::pair<double, int>> area;
  for (const auto& s : scenes)
    for (int v : s.instances.labels)
      if (v) {
        auto& a = area[s.instances.class_of.at(v)];
        a.first += 1;
      }
  std::map<int, int> count;
  for (const auto& s : scenes)
    for (int k : s.classes) ++count[k];
  REQUIRE(count.size() == 4);
  // mean areas strictly increase with the class index for the default archetypes
  double prev = 0.0;
  for (auto [k, a] : area) {
    const double mean = a.first / count[k];
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("config validation") {
  synth::SceneConfig c;
  c.height = 32;
  CHECK_THROWS_AS(synth::generate_scene(c, 0), ConfigError);
  c = {};
  c.num_classes = 1;
  CHECK_THROWS_AS(synth::generate_scene(c, 0), ConfigError);
  c = {};
  c.count_min = 0;
  CHECK_THROWS_AS(synth::generate_scene(c, 0), ConfigError);
  c = {};
  c.count_max = 201;
  CHECK_THROWS_AS(synth::generate_scene(c, 0), ConfigError);
}

TEST_CASE("placement failure names the seed") {
  synth::SceneConfig c;
  c.count_min = c.count_max = 200;
  c.max_attempts_per_nucleus = 20;
  c.max_layout_restarts = 1;
  try {
    synth::generate_scene(c, 4242);
    FAIL("expected a generation error");
  } catch (const GenerationError& e) {
    CHECK(std::string(e.what()).find("4242") != std::string::npos);
  }
}

TEST_CASE("dataset round trip") {
  const fs::path root = scratch("roundtrip");
  synth::SceneConfig c;
  const auto scenes = synth::generate_scenes(c, 5, 20);
  synth::write_dataset(scenes, root, 4, {}, 20);
  const auto ds = synth::read_dataset(root);
  REQUIRE(ds.scenes.size() == 5);
  CHECK(ds.manifest.num_classes == 4);
  CHECK(ds.manifest.seed == 20);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(ds.scenes[i].instances == scenes[i].instances);
    CHECK(ds.scenes[i].classes == scenes[i].classes);
    CHECK(ds.scenes[i].image.data == scenes[i].image.data);
    for (std::size_t k = 0; k < scenes[i].points.size(); ++k) {
      CHECK(ds.scenes[i].points[k].x == scenes[i].points[k].x);
      CHECK(ds.scenes[i].points[k].y == scenes[i].points[k].y);
    }
  }
  // rewriting gives byte-identical files
  const fs::path again = scratch("roundtrip2");
  synth::write_dataset(scenes, again, 4, {}, 20);
  for (const auto& e : ds.manifest.scenes)
    for (const auto& f : {e.image, e.mask, e.ann}) CHECK(slurp(root / f) == slurp(again / f));
  CHECK(slurp(root / "manifest.json") == slurp(again / "manifest.json"));
}

TEST_CASE("empty scene round trip") {
  const fs::path root = scratch("empty");
  synth::Scene s = oracle::handmade_scene(64, 64, {});
  synth::write_dataset({s}, root, 2);
  const auto ds = synth::read_dataset(root);
  REQUIRE(ds.scenes.size() == 1);
  CHECK(ds.scenes[0].n() == 0);
}

TEST_CASE("dataset load errors") {
  CHECK_THROWS_AS(synth::read_dataset(scratch("nothing")), LoadError);
  const fs::path root = scratch("badclass");
  synth::SceneConfig c;
  auto scenes = synth::generate_scenes(c, 1, 5);
  REQUIRE(*std::max_element(scenes[0].classes.begin(), scenes[0].classes.end()) > 0);
  // annotations use class ids beyond the manifest's class count
  synth::write_dataset(scenes, root, 1);
  CHECK_THROWS_AS(synth::read_dataset(root), ConsistencyError);
  fs::remove(root / "masks" / "0000.png");
  CHECK_THROWS_AS(synth::read_dataset(root), Error);
}

TEST_CASE("png round trips") {
  const fs::path root = scratch("png");
  png::Image16 g{3, 2, {0, 1, 65535, 300, 7, 42}};
  png::write_gray16(root / "g.png", g);
  const auto back = png::read_gray16(root / "g.png");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == g.pixels);
  CHECK_THROWS_AS(png::read_rgb8(root / "missing.png"), LoadError);
}

TEST_CASE("median equivalent radius") {
  synth::NucleusSpec a;
  a.center = {20.5, 20.5};
  a.semi_major = a.semi_minor = 3.0;
  const auto s = oracle::handmade_scene(64, 64, {a});
  double area = 0;
  for (int v : s.instances.labels) area += v != 0;
  CHECK(synth::median_equivalent_radius({s}) == doctest::Approx(std::sqrt(area / std::numbers::pi)));
}
