#include "pmala/adapt.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pmala;

TEST(Adapt, PublishedDefaults) {
  const AdaptationSettings s;
  EXPECT_EQ(s.target, 0.75);
  EXPECT_EQ(s.sigma, 0.05);
  EXPECT_EQ(s.window, 100);
  EXPECT_EQ(s.rho, 0.5);
  EXPECT_EQ(s.rho_min, 1e-3);
  EXPECT_EQ(s.gamma, -0.5);
  EXPECT_EQ(s.initial_delta, 1e-2);
  EXPECT_EQ(s.iterations, 10000);
}

TEST(Adapt, DeadZoneIsFixedPoint) {
  AdaptationSettings s;
  s.window = 4;
  AdaptationState st(s, {0.3, 0.3}, AdaptMode::per_time_step);
  // Three accepts and one reject per window: α = 0.75 exactly once the window is full.
  const std::vector<std::vector<bool>> pattern = {{true, true}, {true, true}, {true, true}, {false, false}};
  for (int i = 0; i < 4; ++i) st.update(pattern[i]);
  const std::vector<double> before = st.step_sizes();
  for (int i = 0; i < 40; ++i) st.update(pattern[i % 4]);
  EXPECT_EQ(st.step_sizes(), before);
}

TEST(Adapt, AllAcceptsGrowAndAllRejectsShrink) {
  AdaptationSettings s;
  AdaptationState up(s, {0.1, 0.1}, AdaptMode::per_time_step);
  up.update({true, true});
  EXPECT_GT(up.step_sizes()[0], 0.1);
  // First update: rate max(1^γ ρ, ρ_min) = 0.5, α = 1: δ = 0.1 + 0.5·(0.25/0.75).
  EXPECT_NEAR(up.step_sizes()[0], 0.1 + 0.5 / 3.0, 1e-15);

  AdaptationState down(s, {0.1, 0.1}, AdaptMode::per_time_step);
  down.update({false, true});
  EXPECT_EQ(down.step_sizes()[0], kMinStepSize);  // 0.1 − 0.5 floors at the minimum
  EXPECT_GT(down.step_sizes()[1], 0.1);
}

TEST(Adapt, RateDecaysToFloor) {
  AdaptationSettings s;
  s.window = 1;
  AdaptationState st(s, {1.0}, AdaptMode::per_time_step);
  for (int i = 0; i < 1000000; ++i) st.update({true});
  // Past k = (ρ/ρ_min)^{1/|γ|} = 250000 the increment is ρ_min/3.
  const double d0 = st.step_sizes()[0];
  st.update({true});
  EXPECT_NEAR(st.step_sizes()[0] - d0, 1e-3 / 3.0, 1e-12);
}

TEST(Adapt, WindowHoldsMostRecentRows) {
  AdaptationSettings s;
  s.window = 3;
  s.sigma = 1.0;  // freeze δ so only the window is under test
  AdaptationState st(s, {1.0}, AdaptMode::per_time_step);
  st.update({true});
  EXPECT_EQ(st.filled(), 1);
  EXPECT_EQ(st.window_rates()[0], 1.0);
  st.update({false});
  st.update({false});
  st.update({false});
  EXPECT_EQ(st.filled(), 3);
  EXPECT_EQ(st.window_rates()[0], 0.0);
}

TEST(Adapt, GlobalModeUsesTimeAveragedAcceptance) {
  AdaptationSettings s;
  AdaptationState st(s, {0.2, 0.5, 0.9}, AdaptMode::global);
  EXPECT_EQ(st.step_sizes(), std::vector<double>(3, 0.2));
  st.update({true, true, false});  // mean 2/3: outside the dead zone, below target
  EXPECT_NEAR(st.step_sizes()[0], 0.2 + 0.5 * (2.0 / 3.0 - 0.75) / 0.75, 1e-15);
  EXPECT_EQ(st.step_sizes()[0], st.step_sizes()[2]);
}

TEST(Adapt, ClosedLoopReachesTarget) {
  // Synthetic kernel: x_t moves with probability exp(−δ_t), a known monotone map.
  AdaptationSettings s;
  AdaptationState st(s, std::vector<double>(4, 1e-2), AdaptMode::per_time_step);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u;
  std::vector<double> accepted(4, 0.0);
  const int iters = 2000, tail = 500;
  for (int i = 0; i < iters; ++i) {
    std::vector<bool> flags(4);
    for (int t = 0; t < 4; ++t) flags[t] = u(gen) < std::exp(-st.step_sizes()[t]);
    if (i >= iters - tail)
      for (int t = 0; t < 4; ++t) accepted[t] += flags[t];
    st.update(flags);
  }
  for (int t = 0; t < 4; ++t) {
    EXPECT_NEAR(accepted[t] / tail, 0.75, s.sigma + 3 * std::sqrt(0.75 * 0.25 / tail));
    EXPECT_NEAR(std::exp(-st.step_sizes()[t]), 0.75, 0.08);
  }
}

TEST(Adapt, RejectsBadSettings) {
  AdaptationSettings s;
  s.target = 1.5;
  EXPECT_THROW(s.validate(), ConfigurationError);
  s = {};
  s.window = 0;
  EXPECT_THROW(s.validate(), ConfigurationError);
}
