#include <cmath>

#include "apseg/errors.hpp"
#include "apseg/matching.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace apseg;
using ad::Tape;

TEST_CASE("hungarian small cases") {
  const std::vector<double> c{1, 2, 2, 1};
  const auto a = matching::hungarian(c, 2, 2);
  CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
  CHECK(a.total_cost == 2.0);
  const auto one = matching::hungarian(std::vector<double>{0.0}, 1, 1);
  CHECK(one.pairs == std::vector<std::pair<int, int>>{{0, 0}});
  CHECK(one.total_cost == 0.0);
  const auto empty = matching::hungarian(std::vector<double>{}, 3, 0);
  CHECK(empty.pairs.empty());
  CHECK(empty.unmatched_proposals == std::vector<int>{0, 1, 2});
}

TEST_CASE("hungarian ties resolve toward lower indices") {
  const auto a = matching::hungarian(std::vector<double>(9, 1.0), 3, 3);
  CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
  const auto b = matching::hungarian(std::vector<double>(6, 0.0), 3, 2);
  CHECK(b.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
  CHECK(b.unmatched_proposals == std::vector<int>{2});
}

TEST_CASE("hungarian equals permutation brute force on 6x6") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> c(36);
    for (auto& v : c) v = static_cast<double>(rng.uniform_int(0, 20));
    CHECK(matching::hungarian(c, 6, 6).total_cost == oracle::brute_force_assignment(c, 6, 6));
  }
}

TEST_CASE("hungarian handles rectangular matrices") {
  Rng rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6);
    std::vector<double> c(static_cast<std::size_t>(r * k));
    for (auto& v : c) v = rng.uniform(0.0, 10.0);
    const auto a = matching::hungarian(c, r, k);
    CHECK(static_cast<int>(a.pairs.size()) == std::min(r, k));
    CHECK(a.unmatched_proposals.size() + a.pairs.size() == static_cast<std::size_t>(r));
    CHECK(a.unmatched_gt.size() + a.pairs.size() == static_cast<std::size_t>(k));
    double sum = 0;
    for (auto [i, j] : a.pairs) sum += c[static_cast<std::size_t>(i * k + j)];
    CHECK(sum == doctest::Approx(a.total_cost).epsilon(1e-12));
    CHECK(a.total_cost == doctest::Approx(oracle::brute_force_assignment(c, r, k)).epsilon(1e-12));
  }
}

TEST_CASE("hungarian rejects non-finite costs") {
  CHECK_THROWS_AS(matching::hungarian(std::vector<double>{1.0, std::nan("")}, 1, 2), NumericError);
  CHECK_THROWS_AS(matching::hungarian(std::vector<double>{INFINITY}, 1, 1), NumericError);
}

TEST_CASE("point matching") {
  Rng rng(3);
  SUBCASE("exact location matches at zero cost") {
    const Tensor pred({3, 2}, std::vector<double>{0, 0, 10, 10, 20, 5});
    const std::vector<Point2> gt{{10, 10}};
    const auto a = matching::match_points(pred, gt);
    CHECK(a.pairs == std::vector<std::pair<int, int>>{{1, 0}});
    CHECK(a.total_cost == 0.0);
  }
  SUBCASE("no ground truth") {
    const Tensor pred({2, 2}, 1.0);
    const auto a = matching::match_points(pred, std::vector<Point2>{});
    CHECK(a.pairs.empty());
    Tape tape;
    CHECK(matching::regression_loss(tape.constant(pred), std::vector<Point2>{}, a).item() == 0.0);
  }
  SUBCASE("5 predictions versus 3 gt agrees with brute force") {
    for (int trial = 0; trial < 50; ++trial) {
      Tensor pred({5, 2});
      for (auto& v : pred.data) v = rng.uniform(0.0, 30.0);
      std::vector<Point2> gt(3);
      for (auto& p : gt) p = {rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0)};
      std::vector<double> c;
      for (int i = 0; i < 5; ++i)
        for (const auto& g : gt) c.push_back(std::hypot(pred.at(i, 0) - g.x, pred.at(i, 1) - g.y));
      CHECK(matching::match_points(pred, gt).total_cost ==
            doctest::Approx(oracle::brute_force_assignment(c, 5, 3)).epsilon(1e-12));
    }
  }
}

TEST_CASE("labels and regression loss") {
  matching::Assignment a;
  a.pairs = {{1, 0}, {3, 1}};
  const std::vector<int> classes{2, 0};
  CHECK(matching::assign_labels(a, 4, classes, 4) == std::vector<int>{4, 2, 4, 0});
  ad::Parameter pts("p", Tensor({1, 2}, std::vector<double>{3.0, 4.0}));
  matching::Assignment one;
  one.pairs = {{0, 0}};
  const std::vector<Point2> gt{{1.0, 1.0}};
  Tape tape;
  ad::Var l = matching::regression_loss(tape.param(pts), gt, one);
  CHECK(l.item() == 5.0);
  tape.backward(l);
  CHECK(pts.grad.data == std::vector<double>{1.0, 1.0});
  Tape t2(false);
  const std::vector<Point2> same{{3.0, 4.0}};
  CHECK(matching::regression_loss(t2.param(pts), same, one).item() == 0.0);
}

TEST_CASE("total loss") {
  const matching::LossWeights w;
  const auto b = matching::total_loss(2.0, 10.0, 100.0, w);
  CHECK(b.total == doctest::Approx(2.06).epsilon(1e-15));
  CHECK(matching::total_loss(0.0, 0.0, 0.0, w).total == 0.0);
  CHECK(matching::total_loss(3.0, 7.0, 9.0, matching::LossWeights{0.0, 0.0, 0.0}).total == 0.0);
  try {
    matching::total_loss(1.0, std::nan(""), 0.0, w);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("l_reg") != std::string::npos);
  }
}
