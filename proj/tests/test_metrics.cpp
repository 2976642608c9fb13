#include <cmath>

#include "apseg/errors.hpp"
#include "apseg/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace apseg;

namespace {

InstanceMap from_rows(const std::vector<std::vector<int>>& rows, std::map<int, int> classes = {}) {
  InstanceMap m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.height; ++i)
    for (int j = 0; j < m.width; ++j) m.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  for (int id : m.instance_ids()) m.class_of[id] = classes.count(id) ? classes[id] : 0;
  return m;
}

InstanceMap block_map(int h, int w, const std::vector<std::array<int, 5>>& blocks) {
  // each block: id, row0, col0, rows, cols
  InstanceMap m(h, w);
  for (auto [id, r0, c0, nr, nc] : blocks)
    for (int i = r0; i < r0 + nr; ++i)
      for (int j = c0; j < c0 + nc; ++j) m.at(i, j) = id;
  for (int id : m.instance_ids()) m.class_of[id] = 0;
  return m;
}

}  // namespace

TEST_CASE("identical maps") {
  const InstanceMap gt = block_map(16, 16, {{1, 0, 0, 4, 4}, {2, 6, 6, 3, 5}, {3, 12, 0, 4, 16}});
  const auto m = metrics::match_instances_iou(gt, gt);
  REQUIRE(m.matches.size() == 3);
  for (const auto& x : m.matches) CHECK(x.iou == 1.0);
  const auto pq = metrics::panoptic_quality(gt, gt);
  CHECK(pq.pq == 1.0);
  CHECK(pq.dq == 1.0);
  CHECK(metrics::aji(gt, gt) == 1.0);
  CHECK(metrics::dice(gt, gt) == 1.0);
}

TEST_CASE("IoU of exactly one half is not a match") {
  // pred covers 4 pixels, gt covers 2 of them: IoU = 2/4
  const InstanceMap pred = from_rows({{1, 1, 1, 1}});
  const InstanceMap gt = from_rows({{1, 1, 0, 0}});
  CHECK(metrics::match_instances_iou(pred, gt).matches.empty());
}

TEST_CASE("empty prediction") {
  const InstanceMap gt = block_map(8, 8, {{1, 0, 0, 5, 8}});
  const InstanceMap pred(8, 8);
  const auto pq = metrics::panoptic_quality(pred, gt);
  CHECK(pq.dq == 0.0);
  CHECK(pq.pq == 0.0);
  CHECK(pq.fn == 1);
  CHECK(metrics::aji(pred, gt) == 0.0);
  CHECK(metrics::panoptic_quality(pred, pred).pq == 0.0);
  CHECK(metrics::aji(pred, pred) == 1.0);
  CHECK(metrics::dice(pred, pred) == 1.0);
}

TEST_CASE("multi-class PQ averages classes present in gt") {
  // class 0 instance perfectly predicted, class 1 instance missed
  InstanceMap gt = block_map(8, 8, {{1, 0, 0, 3, 3}, {2, 5, 5, 3, 3}});
  gt.class_of = {{1, 0}, {2, 1}};
  InstanceMap pred = block_map(8, 8, {{1, 0, 0, 3, 3}});
  pred.class_of = {{1, 0}};
  const auto mc = metrics::multi_class_pq(pred, gt);
  CHECK(mc.per_class.at(0).pq == 1.0);
  CHECK(mc.per_class.at(1).pq == 0.0);
  CHECK(mc.mpq == 0.5 * mc.per_class.at(0).pq);
  // a predicted class absent from gt does not enter the average
  pred.class_of[1] = 3;
  CHECK(metrics::multi_class_pq(pred, gt).per_class.count(3) == 0);
}

TEST_CASE("hand-computed AJI on an 8x8 grid") {
  // gt1 rows 0-3 cols 0-3 (16 px), gt2 rows 4-7 cols 4-7 (16 px)
  // pred1 rows 0-3 cols 0-1 (8 px, inside gt1); pred2 rows 2-7 cols 4-7 (24 px, covers gt2 + 8 outside)
  const InstanceMap gt = block_map(8, 8, {{1, 0, 0, 4, 4}, {2, 4, 4, 4, 4}});
  const InstanceMap pred = block_map(8, 8, {{1, 0, 0, 4, 2}, {2, 2, 4, 6, 4}});
  // gt1 -> pred1: I = 8, U = 16; gt2 -> pred2: I = 16, U = 24
  CHECK(metrics::aji(pred, gt) == doctest::Approx((8.0 + 16.0) / (16.0 + 24.0)).epsilon(1e-15));
}

TEST_CASE("AJI counts unused predictions in the union") {
  const InstanceMap gt = block_map(8, 8, {{1, 0, 0, 2, 2}});
  const InstanceMap pred = block_map(8, 8, {{1, 0, 0, 2, 2}, {2, 6, 6, 2, 2}});
  CHECK(metrics::aji(pred, gt) == doctest::Approx(4.0 / 8.0));
}

TEST_CASE("dice closed forms") {
  const InstanceMap a = block_map(20, 20, {{1, 0, 0, 10, 10}});
  const InstanceMap b = block_map(20, 20, {{1, 10, 10, 10, 10}});
  CHECK(metrics::dice(a, a) == 1.0);
  CHECK(metrics::dice(a, b) == 0.0);
  // |P| = |G| = 100 with 60 shared pixels
  const InstanceMap c = block_map(20, 20, {{1, 0, 4, 10, 10}});
  CHECK(metrics::dice(a, c) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("size mismatch is rejected") {
  CHECK_THROWS_AS(metrics::dice(InstanceMap(4, 4), InstanceMap(4, 5)), ArgumentError);
}

TEST_CASE("detection scores") {
  const std::vector<Point2> gt{{10, 10}, {30, 30}, {50, 10}};
  const std::vector<int> classes{0, 1, 1};
  SUBCASE("perfect") {
    PromptSet pred{{{10, 10}, 0, 1}, {{30, 30}, 1, 1}, {{50, 10}, 1, 1}};
    const auto d = metrics::detection_scores(pred, gt, classes, 12);
    CHECK(d.detection.f1 == 1.0);
    CHECK(d.classification.f1 == 1.0);
    for (const auto& [c, r] : d.per_class) CHECK(r.f1 == 1.0);
  }
  SUBCASE("outside the radius") {
    const std::vector<Point2> g1{{10, 10}};
    const std::vector<int> c1{0};
    PromptSet pred{{{10 + 13, 10}, 0, 1}};
    CHECK(metrics::detection_scores(pred, g1, c1, 12).detection.f1 == 0.0);
  }
  SUBCASE("one class flipped") {
    PromptSet pred{{{11, 10}, 0, 1}, {{30, 31}, 0, 1}, {{50, 10}, 1, 1}};
    const auto d = metrics::detection_scores(pred, gt, classes, 12);
    CHECK(d.detection.f1 == 1.0);
    // micro: 2 correct of 3 predictions and 3 gt
    CHECK(d.classification.precision == doctest::Approx(2.0 / 3.0));
    CHECK(d.classification.recall == doctest::Approx(2.0 / 3.0));
    // class 0: tp 1, fp 1 (flipped prediction), fn 0 -> P 0.5, R 1, F 2/3
    CHECK(d.per_class.at(0).precision == doctest::Approx(0.5));
    CHECK(d.per_class.at(0).recall == 1.0);
    CHECK(d.per_class.at(0).f1 == doctest::Approx(2.0 / 3.0));
    // class 1: tp 1, fp 0, fn 1 -> P 1, R 0.5, F 2/3
    CHECK(d.per_class.at(1).precision == 1.0);
    CHECK(d.per_class.at(1).recall == 0.5);
    CHECK(d.per_class.at(1).f1 == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("matching prefers more in-radius pairs over shorter distances") {
    // greedy nearest would pair p0-g0 (distance 1) and leave g1 without a partner
    const std::vector<Point2> g2{{10, 10}, {21.5, 10}};
    const std::vector<int> c2{0, 0};
    PromptSet pred{{{11, 10}, 0, 1}, {{0, 10}, 0, 1}};
    CHECK(metrics::detection_scores(pred, g2, c2, 12).detection.tp == 2);
  }
}

TEST_CASE("instance metrics agree with brute-force oracles on random maps") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const InstanceMap gt = oracle::random_instance_map(rng, 16, 16, 5, 3);
    const InstanceMap pred = oracle::random_instance_map(rng, 16, 16, 5, 3);
    const auto pq = metrics::panoptic_quality(pred, gt);
    const auto o = oracle::panoptic(pred, gt);
    CHECK(std::abs(pq.pq - o.pq) < 1e-9);
    CHECK(std::abs(pq.dq - o.dq) < 1e-9);
    CHECK(std::abs(pq.sq - o.sq) < 1e-9);
    CHECK(pq.tp == o.tp);
    CHECK(std::abs(metrics::aji(pred, gt) - oracle::aji(pred, gt)) < 1e-9);
    CHECK(std::abs(metrics::dice(pred, gt) - oracle::dice(pred, gt)) < 1e-9);
  }
}

TEST_CASE("detection F1 agrees with exhaustive matching") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    PromptSet pred(static_cast<std::size_t>(rng.uniform_int(0, 5)));
    for (auto& p : pred) p = {{rng.uniform(0, 40), rng.uniform(0, 40)}, 0, 1.0};
    std::vector<Point2> gt(static_cast<std::size_t>(rng.uniform_int(0, 5)));
    for (auto& g : gt) g = {rng.uniform(0, 40), rng.uniform(0, 40)};
    const std::vector<int> cls(gt.size(), 0);
    CHECK(std::abs(metrics::detection_scores(pred, gt, cls, 12).detection.f1 - oracle::detection_f1(pred, gt, 12)) <
          1e-9);
  }
}

TEST_CASE("report round trip") {
  metrics::SceneMetrics a;
  a.scene = "s0";
  a.pq = 0.25;
  a.det_f = 0.75;
  a.pq_class = {{0, 0.5}, {2, 0.125}};
  metrics::SceneMetrics b;
  b.scene = "s1";
  b.pq = 0.75;
  b.pq_class = {{0, 1.0}};
  const auto path = std::filesystem::temp_directory_path() / "apseg_test_report.csv";
  metrics::write_report_csv(path, {a, b}, 3);
  const auto back = metrics::read_report_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].pq == 0.25);
  CHECK(back[0].det_f == 0.75);
  CHECK(back[0].pq_class == a.pq_class);
  CHECK(back[1].pq_class == b.pq_class);
  const auto mean = metrics::aggregate({a, b});
  CHECK(mean.pq == 0.5);
  CHECK(mean.pq_class.at(0) == 0.75);
  CHECK(mean.pq_class.at(2) == 0.125);
}
