#include <filesystem>
#include <set>

#include "apseg/errors.hpp"
#include "apseg/segmenter.hpp"
#include "doctest.h"

using namespace apseg;
namespace fs = std::filesystem;

TEST_CASE("single prompt gives an 81-pixel lattice disk") {
  segmenter::SegmenterConfig c;
  c.radius = 5;
  const auto m = segmenter::segment(64, 64, {{{32.5, 32.5}, 2, 1.0}}, c);
  int area = 0;
  for (int v : m.labels) area += v == 1;
  CHECK(area == 81);
  CHECK(m.class_of.at(1) == 2);
  CHECK(m.at(32, 32) == 1);
  // lattice oracle
  int lattice = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) lattice += dx * dx + dy * dy <= 25;
  CHECK(area == lattice);
}

TEST_CASE("no prompts gives background") {
  const auto m = segmenter::segment(16, 16, {}, {});
  for (int v : m.labels) CHECK(v == 0);
  CHECK(m.class_of.empty());
}

TEST_CASE("nearby prompts split at the bisector") {
  segmenter::SegmenterConfig c;
  c.radius = 5;
  const auto m = segmenter::segment(32, 32, {{{10.5, 10.5}, 0, 1.0}, {{14.5, 10.5}, 1, 1.0}}, c);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      if (m.at(i, j) == 1) CHECK(j <= 12);
      if (m.at(i, j) == 2) CHECK(j >= 12);
      // column 12 is equidistant and goes to the lower index
      if (j == 12 && m.at(i, j) != 0) CHECK(m.at(i, j) == 1);
    }
  CHECK(m.at(10, 10) == 1);
  CHECK(m.at(10, 14) == 2);
}

TEST_CASE("instance count and prompt containment") {
  segmenter::SegmenterConfig c;
  c.radius = 2;
  PromptSet ps;
  for (int k = 0; k < 10; ++k) ps.push_back({{3.0 + 5 * k, 7.0}, k % 3, 1.0});
  const auto m = segmenter::segment(16, 64, ps, c);
  CHECK(m.instance_ids().size() == 10);
  for (std::size_t k = 0; k < ps.size(); ++k)
    CHECK(m.at(static_cast<int>(ps[k].point.y), static_cast<int>(ps[k].point.x)) == static_cast<int>(k) + 1);
}

TEST_CASE("foreground mask restricts supports") {
  Tensor img({16, 16, 3}, 1.0);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 8; ++j)
      for (int ch = 0; ch < 3; ++ch) img[(static_cast<std::size_t>(i) * 16 + j) * 3 + ch] = 0.2;
  segmenter::SegmenterConfig c;
  c.radius = 4;
  c.use_foreground_mask = true;
  const auto m = segmenter::segment(img, {{{7.5, 7.5}, 0, 1.0}}, c);
  for (int i = 0; i < 16; ++i)
    for (int j = 8; j < 16; ++j) CHECK(m.at(i, j) == 0);
  CHECK(m.at(7, 7) == 1);
}

TEST_CASE("out-of-bounds prompt") {
  CHECK_THROWS_AS(segmenter::segment(16, 16, {{{16.0, 3.0}, 0, 1.0}}, {}), ArgumentError);
  CHECK_THROWS_AS(segmenter::segment(16, 16, {{{3.0, -0.5}, 0, 1.0}}, {}), ArgumentError);
}

TEST_CASE("prompt and instance-map files round trip") {
  const fs::path dir = fs::temp_directory_path() / "apseg_test_seg";
  fs::create_directories(dir);
  const PromptSet ps{{{1.25, 2.5}, 3, 0.875}, {{10.0, 0.0}, 0, 0.5}};
  segmenter::write_prompts_json(dir / "p.json", ps);
  const auto back = segmenter::read_prompts_json(dir / "p.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].point == ps[0].point);
  CHECK(back[0].class_id == 3);
  CHECK(back[0].score == 0.875);
  segmenter::SegmenterConfig c;
  const auto m = segmenter::segment(16, 16, ps, c);
  segmenter::write_instance_map(dir / "m.png", dir / "m.json", m);
  CHECK(segmenter::read_instance_map(dir / "m.png", dir / "m.json") == m);
}

TEST_CASE("external segmenter protocol") {
  const fs::path dir = fs::temp_directory_path() / "apseg_test_ext";
  fs::remove_all(dir);
  fs::create_directories(dir);
  // a shell adapter that copies a fixed instance map
  segmenter::SegmenterConfig c;
  const auto fixed = segmenter::segment(16, 16, {{{4.0, 4.0}, 1, 1.0}}, c);
  segmenter::write_instance_map(dir / "fixed.png", dir / "fixed.json", fixed);
  const std::string cmd = "sh -c 'cp " + (dir / "fixed.png").string() + " \"$3\" && cp " +
                          (dir / "fixed.json").string() + " \"$4\"' adapter";
  segmenter::ExternalSegmenter ext(cmd, dir / "work");
  const auto m = ext.run(Tensor({16, 16, 3}, 0.5), {{{4.0, 4.0}, 1, 1.0}});
  CHECK(m == fixed);
  segmenter::ExternalSegmenter broken("false", dir / "work2");
  CHECK_THROWS_AS(broken.run(Tensor({16, 16, 3}, 0.5), {}), Error);
}
