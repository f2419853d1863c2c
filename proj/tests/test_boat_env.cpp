#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "epiflow/boat_env.hpp"

using namespace epiflow;

namespace {

const EnvConfig kEnv;

State random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> x1(kEnv.box.x1_min, kEnv.box.x1_max), x2(kEnv.box.x2_min, kEnv.box.x2_max);
  return {x1(rng), x2(rng)};
}

TEST(BoatEnv, DefaultsMatchPublishedSetup) {
  EXPECT_DOUBLE_EQ(kEnv.dt, 0.005);
  EXPECT_DOUBLE_EQ(kEnv.gamma, 0.99);
  EXPECT_DOUBLE_EQ(kEnv.reward_scale, 0.1);
  EXPECT_EQ(kEnv.goal, (State{0.5, 0.0}));
  EXPECT_EQ(kEnv.episode_length, 400);
  EXPECT_EQ(kEnv.box, (StateBox{-3.0, 2.0, -2.0, 2.0}));
  ASSERT_EQ(kEnv.obstacles.size(), 2u);
  EXPECT_EQ(kEnv.obstacles[0].center, (State{-0.5, 0.5}));
  EXPECT_EQ(kEnv.obstacles[1].center, (State{-1.0, -1.2}));
  EXPECT_DOUBLE_EQ(kEnv.obstacles[0].radius, 0.4);
}

TEST(BoatEnv, RewardExamples) {
  EXPECT_DOUBLE_EQ(reward({0.5, 0.0}, kEnv), 0.0);
  EXPECT_NEAR(reward({1.5, 0.0}, kEnv), -0.1, 1e-15);
  EXPECT_NEAR(reward({0.5, -2.0}, kEnv), -0.2, 1e-15);
}

TEST(BoatEnv, SafetyExamples) {
  EXPECT_NEAR(safety({-0.5, 0.5}, kEnv), -0.4, 1e-15);
  EXPECT_NEAR(safety({-0.1, 0.5}, kEnv), 0.0, 1e-15);
  EXPECT_NEAR(safety({-1.0, -1.2}, kEnv), -0.4, 1e-15);
}

TEST(BoatEnv, DynamicsExamples) {
  const State a = integrate_dynamics({0, 0}, {0, 0}, kEnv);
  EXPECT_NEAR(a.x1, 0.01, 1e-15);
  EXPECT_NEAR(a.x2, 0.0, 1e-15);
  const State b = integrate_dynamics({0, 2}, {0, 0}, kEnv);
  EXPECT_NEAR(b.x1, 0.0, 1e-15);
  EXPECT_NEAR(b.x2, 2.0, 1e-15);
  // Hand evaluation: x1 += (1 + 2 - 0.5) * 0.005, x2 += -1 * 0.005.
  const State c = integrate_dynamics({0, 1}, {1, -1}, kEnv);
  EXPECT_NEAR(c.x1, 0.0125, 1e-12);
  EXPECT_NEAR(c.x2, 0.995, 1e-12);
}

TEST(BoatEnv, StepRejectsActionsOutsideDisc) {
  EXPECT_NO_THROW(step({0, 0}, {1.0, 0.0}, kEnv));
  EXPECT_NO_THROW(step({0, 0}, {1.0 + 0.5e-9, 0.0}, kEnv));
  EXPECT_THROW(step({0, 0}, {1.0 + 1e-8, 0.0}, kEnv), std::invalid_argument);
  EXPECT_THROW(step({0, 0}, {1.0, -1.0}, kEnv), std::invalid_argument);
}

TEST(BoatEnv, StepAttributesRewardAndSafetyToPreStepState) {
  const State s{-0.2, 0.5};
  const auto r = step(s, {0, 0}, kEnv);
  EXPECT_DOUBLE_EQ(r.reward, reward(s, kEnv));
  EXPECT_DOUBLE_EQ(r.ell, safety(s, kEnv));
  EXPECT_FALSE(r.done);
  EXPECT_TRUE(step(s, {0, 0}, kEnv, kEnv.episode_length - 1).done);
}

TEST(BoatEnv, StepClampsToBox) {
  const auto r = step({1.999, 0.0}, {1.0, 0.0}, kEnv);
  EXPECT_DOUBLE_EQ(r.next.x1, kEnv.box.x1_max);
  const auto d = step({0.0, -1.999}, {0.0, -1.0}, kEnv);
  EXPECT_DOUBLE_EQ(d.next.x2, kEnv.box.x2_min);
}

TEST(BoatEnv, BudgetUpdateExamples) {
  EXPECT_NEAR(next_budget(1.0, 0.1, 0.99), 0.9 / 0.99, 1e-15);
  EXPECT_EQ(next_budget(0.0, 0.0, 0.99), 0.0);
  EXPECT_NEAR(next_budget(-5.0, -0.2, 0.99), -4.8 / 0.99, 1e-14);
  const AugmentedState as{{1.5, 0.0}, 1.0};
  const AugmentedState next = step_augmented(as, {0, 0}, kEnv);
  EXPECT_NEAR(next.z, (1.0 - (-0.1)) / 0.99, 1e-14);
}

TEST(BoatEnv, ValidateRejectsBadConfig) {
  EnvConfig c;
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EnvConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EnvConfig{};
  c.obstacles[0].radius = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(BoatEnvProperty, RewardNonPositiveAndSafetyOneLipschitz) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const State s = random_state(rng), t = random_state(rng);
    EXPECT_LE(reward(s, kEnv), 0.0);
    EXPECT_LE(std::abs(safety(s, kEnv) - safety(t, kEnv)), std::hypot(s.x1 - t.x1, s.x2 - t.x2) + 1e-12);
  }
}

TEST(BoatEnvProperty, StepIsDeterministicAndBudgetInverts) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI), rad(0.0, 1.0), z(-40.0, 0.0);
  for (int i = 0; i < 10000; ++i) {
    const State s = random_state(rng);
    const double th = ang(rng), rho = rad(rng);
    const Action a{rho * std::cos(th), rho * std::sin(th)};
    const auto p = step(s, a, kEnv), q = step(s, a, kEnv);
    EXPECT_EQ(p.next, q.next);
    const double zz = z(rng);
    const double r = reward(s, kEnv);
    EXPECT_NEAR(previous_budget(next_budget(zz, r, kEnv.gamma), r, kEnv.gamma), zz, 1e-12);
    const State n = p.next;
    EXPECT_GE(n.x1, kEnv.box.x1_min);
    EXPECT_LE(n.x1, kEnv.box.x1_max);
  }
}

TEST(BoatEnvProperty, DiscountingNeverFlipsSafetySign) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double ell = safety(random_state(rng), kEnv);
    for (int k : {1, 10, 400}) EXPECT_EQ(std::signbit(ell), std::signbit(std::pow(kEnv.gamma, k) * ell));
  }
}

TEST(BoatEnv, ProjectionOntoDisc) {
  const Action p = project_to_disc({3.0, 4.0});
  EXPECT_NEAR(p.a1, 0.6, 1e-15);
  EXPECT_NEAR(p.a2, 0.8, 1e-15);
  EXPECT_EQ(project_to_disc({0.3, 0.4}), (Action{0.3, 0.4}));
}

}  // namespace
