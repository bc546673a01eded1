#include <gtest/gtest.h>

#include <cmath>

#include "expect_error.hpp"
#include "protoforge/optim.hpp"

namespace protoforge {
namespace {

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamW opt(2, AdamWConfig{0.1, 0.9, 0.999, 1e-12, 0.0});
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{3.0, -0.02};
  opt.step(p, g);
  // Bias-corrected first step is lr·sign(g) up to eps.
  EXPECT_NEAR(p[0], 0.9, 1e-10);
  EXPECT_NEAR(p[1], -0.9, 1e-10);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(AdamW, MinimizesQuadratic) {
  AdamW opt(3, AdamWConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
  std::vector<double> p{2.0, -3.0, 0.5};
  std::vector<double> g(3);
  for (int s = 0; s < 2000; ++s) {
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * (p[i] - 1.0);
    opt.step(p, g);
  }
  for (double v : p) EXPECT_NEAR(v, 1.0, 1e-3);
}

TEST(AdamW, DecayPullsTowardAnchor) {
  AdamW opt(1, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  std::vector<double> p{2.0};
  const std::vector<double> zero_grad{0.0};
  const std::vector<double> anchor{1.0};
  opt.step(p, zero_grad, anchor);
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 1.0, 1e-15);

  AdamW plain(1, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  std::vector<double> q{2.0};
  plain.step(q, zero_grad);
  EXPECT_NEAR(q[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(AdamW, AnchorIsFixedPointWithZeroGradient) {
  AdamW opt(2, AdamWConfig{});
  std::vector<double> p{0.3, 0.4};
  const std::vector<double> anchor = p;
  const std::vector<double> zero{0.0, 0.0};
  for (int s = 0; s < 10; ++s) opt.step(p, zero, anchor);
  EXPECT_EQ(p, anchor);
}

TEST(AdamW, SizeMismatch) {
  AdamW opt(2, AdamWConfig{});
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{1.0};
  EXPECT_PF_ERROR(opt.step(p, g), ErrorCode::kShapeMismatch);
}

}  // namespace
}  // namespace protoforge
