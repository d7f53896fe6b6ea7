#include <gtest/gtest.h>

#include <cmath>

#include "asc/gradcheck.hpp"
#include "asc/group.hpp"
#include "asc/se.hpp"
#include "helpers.hpp"

using namespace asc;
using test::randn;

namespace {

P4Element random_element(Rng& rng, int range) {
  return {static_cast<int>(rng.below(4)),
          {static_cast<std::int64_t>(rng.below(2 * range + 1)) - range, static_cast<std::int64_t>(rng.below(2 * range + 1)) - range}};
}

}  // namespace

TEST(Squeeze, ZeroWeightsGiveHalf) {
  Rng rng(1);
  const Tensor gate = squeeze(randn({2, 4, 3, 3}, rng), {Tensor::zeros({4, 2}), Tensor::zeros({2, 4})});
  EXPECT_EQ(gate.shape(), (Shape{2, 4}));
  for (const float v : gate.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Squeeze, ClosedFormOnConstantInput) {
  // d = 2, r = 2: w2 [1, 2], w1 [2, 1].
  const float c = 1.5f;
  const Tensor w2 = Tensor::from({1, 2}, {0.4f, -0.1f}), w1 = Tensor::from({2, 1}, {2.0f, -3.0f});
  const Tensor gate = squeeze(Tensor::full({1, 2, 4, 4}, c), {w1, w2});
  const double hidden = std::max(0.0, 0.4 * c - 0.1 * c);
  EXPECT_NEAR(gate.at({0, 0}), 1.0 / (1.0 + std::exp(-2.0 * hidden)), 1e-7);
  EXPECT_NEAR(gate.at({0, 1}), 1.0 / (1.0 + std::exp(3.0 * hidden)), 1e-7);
}

TEST(Squeeze, AveragesOverOrientations) {
  Rng rng(2);
  const Tensor f = randn({1, 2, 4, 3, 3}, rng);
  const SeParams p{randn({2, 1}, rng), randn({1, 2}, rng)};
  double m0 = 0.0, m1 = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        m0 += f.at({0, 0, r, i, j}) / 36.0;
        m1 += f.at({0, 1, r, i, j}) / 36.0;
      }
  const double h = std::max(0.0, p.w2.at({0, 0}) * m0 + p.w2.at({0, 1}) * m1);
  EXPECT_NEAR(squeeze(f, p).at({0, 1}), 1.0 / (1.0 + std::exp(-p.w1.at({1, 0}) * h)), 1e-6);
}

TEST(Squeeze, GateStrictlyInsideUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor gate = squeeze(randn({2, 8, 4, 4}, rng), {randn({8, 2}, rng), randn({2, 8}, rng)});
    for (const float v : gate.data()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
}

TEST(Squeeze, InvariantUnderGroupActions) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const SeParams p{randn({8, 2}, rng), randn({2, 8}, rng)};
    const auto g = random_element(rng, 6);
    const Tensor planar = randn({2, 8, 6, 6}, rng);
    EXPECT_LT(test::max_abs_diff(squeeze(act_planar(g, planar), p), squeeze(planar, p)), 1e-6);
    const Tensor group = randn({2, 8, 4, 6, 6}, rng);
    EXPECT_LT(test::max_abs_diff(squeeze(act_group(g, group), p), squeeze(group, p)), 1e-6);
  }
}

TEST(Squeeze, ShapeMismatch) {
  EXPECT_THROW(squeeze(Tensor::zeros({1, 4, 2, 2}), {Tensor::zeros({3, 2}), Tensor::zeros({2, 3})}), Error);
}

TEST(Excite, OnesAndZeros) {
  Rng rng(5);
  const Tensor f = randn({2, 3, 4, 4}, rng);
  EXPECT_EQ(test::max_abs_diff(excite(f, Tensor::ones({2, 3})), f), 0.0);
  const Tensor zero = excite(f, Tensor::zeros({2, 3}));
  for (const float v : zero.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(excite(f, Tensor::ones({2, 4})), Error);
}

TEST(Excite, MatchesLoopOracle) {
  Rng rng(6);
  const Tensor f = randn({2, 3, 4, 2, 2}, rng), gate = test::uniform({2, 3}, rng, 0.0, 1.0);
  const Tensor out = excite(f, gate);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 4; ++r)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) EXPECT_EQ(out.at({b, c, r, i, j}), f.at({b, c, r, i, j}) * gate.at({b, c}));
}

TEST(Excite, BlockCommutesWithGroupActions) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const SeParams p{randn({4, 1}, rng), randn({1, 4}, rng)};
    const auto g = random_element(rng, 5);
    const Tensor f = randn({1, 4, 4, 5, 5}, rng);
    const auto block = [&](const Tensor& x) { return excite(x, squeeze(x, p)); };
    EXPECT_LT(test::max_abs_diff(block(act_group(g, f)), act_group(g, block(f))), 1e-6);
    const Tensor planar = randn({1, 4, 5, 5}, rng);
    EXPECT_LT(test::max_abs_diff(block(act_planar(g, planar)), act_planar(g, block(planar))), 1e-6);
  }
}

TEST(Gradients, SqueezeExcite) {
  Rng rng(8);
  Tensor f = randn({2, 4, 4, 3, 3}, rng, 1.0, true), w1 = randn({4, 2}, rng, 1.0, true), w2 = randn({2, 4}, rng, 1.0, true);
  const auto report = gradcheck([&] { return excite(f, squeeze(f, {w1, w2})); }, {{"f", f}, {"w1", w1}, {"w2", w2}});
  EXPECT_TRUE(report.passed) << report.max_error;
}
