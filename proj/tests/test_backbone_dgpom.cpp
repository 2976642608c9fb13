#include <cmath>

#include "apseg/backbone.hpp"
#include "apseg/dgpom.hpp"
#include "apseg/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace apseg;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("backbone initialization is seeded") {
  backbone::BackboneConfig c;
  c.channels = 32;
  auto a = backbone::init_backbone(c, 0), b = backbone::init_backbone(c, 0), d = backbone::init_backbone(c, 1);
  auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value.data == pb[i]->value.data);
    any_diff = any_diff || pa[i]->value.data != pd[i]->value.data;
  }
  CHECK(any_diff);
  c.channels = 0;
  CHECK_THROWS_AS(backbone::init_backbone(c, 0), ConfigError);
}

TEST_CASE("pyramid shapes") {
  backbone::BackboneConfig c;
  c.channels = 32;
  auto p = backbone::init_backbone(c, 0);
  Tape tape(false);
  const auto pyr = backbone::extract_pyramid(tape, tape.constant(Tensor({3, 128, 128}, 0.5)), p);
  CHECK(pyr.levels[0].shape() == std::vector<int>{32, 32, 32});
  CHECK(pyr.levels[1].shape() == std::vector<int>{32, 16, 16});
  CHECK(pyr.levels[2].shape() == std::vector<int>{32, 8, 8});
  CHECK(pyr.shallow().id() == pyr.levels[0].id());
  CHECK_THROWS_AS(backbone::extract_pyramid(tape, tape.constant(Tensor({3, 130, 128}, 0.5)), p), ShapeError);
}

TEST_CASE("zero image with zero biases gives zero features") {
  backbone::BackboneConfig c;
  auto p = backbone::init_backbone(c, 4);
  Tape tape(false);
  const auto pyr = backbone::extract_pyramid(tape, tape.constant(Tensor({3, 64, 64}, 0.0)), p);
  for (const auto& level : pyr.levels)
    for (double v : level.value().data) CHECK(v == 0.0);
}

TEST_CASE("backbone gradients match finite differences on 64x64") {
  backbone::BackboneConfig c;
  auto p = backbone::init_backbone(c, 2);
  Rng rng(9);
  // non-trivial biases and norm parameters so no term is degenerate
  for (auto* q : p.parameters())
    if (q->value.rank() == 1)
      for (auto& v : q->value.data) v += rng.uniform(-0.1, 0.1);
  const Tensor image = random_tensor({3, 64, 64}, rng);
  std::array<Tensor, 3> weights;
  auto f = [&](bool backprop) {
    Tape tape(backprop);
    const auto pyr = backbone::extract_pyramid(tape, tape.constant(image), p);
    std::vector<Var> terms;
    for (std::size_t l = 0; l < 3; ++l) {
      if (weights[l].data.empty()) weights[l] = random_tensor(pyr.levels[l].shape(), rng, -1.0, 1.0);
      terms.push_back(ad::sum(ad::mul(pyr.levels[l], tape.constant(weights[l]))));
    }
    const std::vector<double> ones{1.0, 1.0, 1.0};
    Var loss = ad::weighted_sum(terms, ones);
    if (backprop) tape.backward(loss);
    return loss.item();
  };
  for (auto* q : p.parameters()) q->zero_grad();
  f(true);
  oracle::GradCheck gc;
  for (auto* q : p.parameters()) {
    const Tensor analytic = q->grad;
    oracle::check_entries(*q, analytic, [&] { return f(false); }, oracle::spread_entries(q->value.size(), 10), 1e-5,
                          1e-4, gc);
  }
  INFO("worst analytic " << gc.analytic << " numeric " << gc.numeric);
  CHECK(gc.max_rel < 1e-4);
}

TEST_CASE("proposal grid") {
  const Tensor g = dgpom::make_proposal_grid(8, 8, 4);
  CHECK(g.data == std::vector<double>{2, 2, 6, 2, 2, 6, 6, 6});
  CHECK(dgpom::make_proposal_grid(128, 128, 4).dim(0) == 1024);
  CHECK_THROWS_AS(dgpom::make_proposal_grid(10, 8, 4), ShapeError);
}

TEST_CASE("distribution decoder") {
  auto p = dgpom::init_dgpom(2, 0);
  SUBCASE("zero input gives zero output") {
    Tape tape(false);
    const Tensor out = dgpom::distribution_decode(tape, tape.constant(Tensor({2, 4, 4}, 0.0)), p).value();
    for (double v : out.data) CHECK(v == 0.0);
  }
  SUBCASE("output is non-negative") {
    Rng rng(1);
    Tape tape(false);
    const Tensor out =
        dgpom::distribution_decode(tape, tape.constant(random_tensor({2, 4, 4}, rng, -3.0, 3.0)), p).value();
    for (double v : out.data) CHECK(v >= 0.0);
  }
  SUBCASE("hand-set centre-tap kernels") {
    // conv1: out0 = x0 - x1, out1 = x1 - 2; conv2: out0 = h0 + h1, out1 = -h0
    p.dec1_w.value.fill(0.0);
    p.dec2_w.value.fill(0.0);
    auto tap = [](ad::Parameter& w, int o, int i, double v) { w.value[((o * 2 + i) * 3 + 1) * 3 + 1] = v; };
    tap(p.dec1_w, 0, 0, 1.0);
    tap(p.dec1_w, 0, 1, -1.0);
    tap(p.dec1_w, 1, 1, 1.0);
    p.dec1_b.value = Tensor({2}, std::vector<double>{0.0, -2.0});
    tap(p.dec2_w, 0, 0, 1.0);
    tap(p.dec2_w, 0, 1, 1.0);
    tap(p.dec2_w, 1, 0, -1.0);
    p.dec2_b.value = Tensor({2}, 0.0);
    Tensor x({2, 4, 4});
    for (int i = 0; i < 16; ++i) {
      x[static_cast<std::size_t>(i)] = i;            // channel 0
      x[static_cast<std::size_t>(16 + i)] = 15 - i;  // channel 1
    }
    Tape tape(false);
    const Tensor out = dgpom::distribution_decode(tape, tape.constant(x), p).value();
    for (int i = 0; i < 16; ++i) {
      const double h0 = std::max(0.0, i - (15.0 - i)), h1 = std::max(0.0, (15.0 - i) - 2.0);
      CHECK(out[static_cast<std::size_t>(i)] == h0 + h1);
      CHECK(out[static_cast<std::size_t>(16 + i)] == std::max(0.0, -h0));
    }
  }
}

TEST_CASE("deformation and regression offsets") {
  auto p = dgpom::init_dgpom(4, 3);
  Rng rng(2);
  const Tensor decoded = random_tensor({4, 8, 8}, rng);
  const Tensor grid = dgpom::make_proposal_grid(32, 32, 4);
  SUBCASE("fresh parameters leave proposals unchanged bitwise") {
    Tape tape(false);
    const auto d = dgpom::deform_proposals(tape, tape.constant(decoded), tape.constant(grid), p);
    CHECK(d.moved.value().data == grid.data);
    for (double v : d.offsets.value().data) CHECK(v == 0.0);
  }
  SUBCASE("offsets add to proposals") {
    p.def2_b.value = Tensor({2}, std::vector<double>{1.0, -2.0});
    Tape tape(false);
    const auto d = dgpom::deform_proposals(tape, tape.constant(decoded),
                                           tape.constant(Tensor({1, 2}, std::vector<double>{10.0, 10.0})), p);
    CHECK(d.moved.value().data == std::vector<double>{11.0, 8.0});
  }
  SUBCASE("zero regression output keeps deformed proposals") {
    backbone::BackboneConfig bc;
    bc.channels = 8;
    auto bp = backbone::init_backbone(bc, 1);
    auto p8 = dgpom::init_dgpom(8, 3);
    Tape tape(false);
    const auto pyr = backbone::extract_pyramid(tape, tape.constant(random_tensor({3, 32, 32}, rng)), bp);
    Tensor deformed = grid;
    for (auto& v : deformed.data) v += rng.uniform(-1.0, 1.0);
    const auto r = dgpom::regress_points(tape, pyr, tape.constant(deformed), p8);
    CHECK(r.moved.value().data == deformed.data);
    CHECK(r.offsets.value().shape == std::vector<int>{64, 2});
  }
}

TEST_CASE("count loss") {
  Tape tape;
  Tensor d({1, 2, 3}, 2.0);  // sums to 12
  CHECK(dgpom::count_loss(tape.constant(d), 12).item() == 0.0);
  d.fill(10.0 / 6.0);
  CHECK(dgpom::count_loss(tape.constant(d), 12).item() == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(dgpom::count_loss(tape.constant(d), -1), ArgumentError);
  // gradient is sign(sum - N) everywhere, in agreement with finite differences
  for (double n : {12.0, 8.0}) {
    ad::Parameter dp("d", d);
    Tape t2;
    t2.backward(dgpom::count_loss(t2.param(dp), n));
    const double expect = 10.0 - n > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(dp.grad[i] == expect);
      const double h = 1e-6, saved = dp.value[i];
      dp.value[i] = saved + h;
      Tape a(false);
      const double up = dgpom::count_loss(a.param(dp), n).item();
      dp.value[i] = saved - h;
      Tape b(false);
      const double down = dgpom::count_loss(b.param(dp), n).item();
      dp.value[i] = saved;
      CHECK((up - down) / (2 * h) == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("density map is non-negative with the configured initial level") {
  auto p = dgpom::init_dgpom(4, 0, -4.0);
  Tape tape(false);
  const Tensor d = dgpom::density_map(tape, tape.constant(Tensor({4, 8, 8}, 0.0)), p).value();
  CHECK(d.shape == std::vector<int>{1, 8, 8});
  for (double v : d.data) CHECK(v == doctest::Approx(std::log1p(std::exp(-4.0))));
}
