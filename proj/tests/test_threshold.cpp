#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "epiflow/threshold.hpp"

using namespace epiflow;

namespace {

ThresholdConfig interval(double lo, double hi, int iterations = 32) {
  ThresholdConfig c;
  c.z_lo = lo;
  c.z_hi = hi;
  c.iterations = iterations;
  return c;
}

ScalarEvaluator in_z(std::function<double(double)> f) {
  return [f](const State&, double z) { return f(z); };
}

}  // namespace

TEST(ZStar, LinearRoot) {
  const auto r = z_star(in_z([](double z) { return 1.0 - z; }), {0, 0}, interval(0, 2));
  EXPECT_EQ(r.status, ThresholdStatus::Interior);
  EXPECT_NEAR(r.z, 1.0, 2.0 / std::pow(2.0, 32));
  EXPECT_EQ(r.sign_changes, 1);
}

TEST(ZStar, CubicRoot) {
  const auto r = z_star(in_z([](double z) { return 8.0 - z * z * z; }), {0, 0}, interval(0, 3));
  EXPECT_NEAR(r.z, std::cbrt(8.0), 3.0 / std::pow(2.0, 32));
}

TEST(ZStar, InfeasibleAndSaturated) {
  const auto inf = z_star(in_z([](double) { return -1.0; }), {0, 0}, interval(-2, 1));
  EXPECT_EQ(inf.status, ThresholdStatus::Infeasible);
  EXPECT_EQ(inf.z, -2.0);
  const auto sat = z_star(in_z([](double) { return 0.5; }), {0, 0}, interval(-2, 1));
  EXPECT_EQ(sat.status, ThresholdStatus::Saturated);
  EXPECT_EQ(sat.z, 1.0);
  EXPECT_STREQ(status_name(ThresholdStatus::Saturated), "saturated");
}

TEST(ZStar, NonFiniteEvaluationThrows) {
  EXPECT_THROW(z_star(in_z([](double z) { return z > 0.5 ? std::nan("") : 1.0; }), {0, 0}, interval(0, 1)),
               std::domain_error);
  EXPECT_THROW(z_star(in_z([](double) { return INFINITY; }), {0, 0}, interval(0, 1)), std::domain_error);
}

TEST(ZStar, ConfigValidation) {
  EXPECT_THROW(z_star(in_z([](double z) { return -z; }), {0, 0}, interval(1, 1)), std::invalid_argument);
  EXPECT_THROW(z_star(in_z([](double z) { return -z; }), {0, 0}, interval(0, 1, 0)), std::invalid_argument);
  auto c = interval(0, 1);
  c.scan_points = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ZStar, NonMonotoneResolvesToLargestCrossing) {
  // Non-negative on [0, 1] and [2, 3], negative elsewhere in [0, 4].
  auto f = [](double z) { return (z <= 1.0 || (z >= 2.0 && z <= 3.0)) ? 0.5 : -0.5; };
  const auto r = z_star(in_z(f), {0, 0}, interval(0, 4));
  EXPECT_EQ(r.status, ThresholdStatus::Interior);
  EXPECT_NEAR(r.z, 3.0, 1e-6);
  EXPECT_EQ(r.sign_changes, 3);

  auto plain = interval(0, 4);
  plain.scan_points = 0;
  EXPECT_EQ(z_star(in_z(f), {0, 0}, plain).sign_changes, 0);
}

TEST(ZStarBatch, EmptyIdenticalAndClamped) {
  const BatchEvaluator v = [](const Matrix& x, const RowVector& z) {
    return RowVector((x.row(0).array() - z.array()).matrix());
  };
  const auto cfg = interval(-1, 1);
  EXPECT_TRUE(z_star_batch(v, {}, cfg).empty());

  const auto same = z_star_batch(v, {{0.3, 0}, {0.3, 0}, {0.3, 0}}, cfg);
  for (const auto& r : same) {
    EXPECT_EQ(r.z, same[0].z);
    EXPECT_EQ(r.status, same[0].status);
  }

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<State> states(100);
  for (auto& s : states) s = {u(rng), u(rng)};
  for (const auto& r : z_star_batch(v, states, cfg)) {
    EXPECT_GE(r.z, cfg.z_lo);
    EXPECT_LE(r.z, cfg.z_hi);
  }
}

TEST(ZStarBatch, MatchesScalarPerState) {
  auto f = [](const State& s, double z) { return std::tanh(s.x1) - z * (1.0 + s.x2 * s.x2); };
  const BatchEvaluator v = [&](const Matrix& x, const RowVector& z) {
    RowVector out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = f({x(0, i), x(1, i)}, z[i]);
    return out;
  };
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<State> states(50);
  for (auto& s : states) s = {u(rng), u(rng)};
  const auto cfg = interval(-0.8, 0.8);
  const auto batch = z_star_batch(v, states, cfg);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto one = z_star(f, states[i], cfg);
    EXPECT_EQ(batch[i].z, one.z);
    EXPECT_EQ(batch[i].status, one.status);
  }
}

// Random monotone non-increasing evaluators: the bracket property around z*.
TEST(ZStarProperty, BracketsRootOfMonotoneFunctions) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const double root = -2.0 + 4.0 * u(rng), slope = 0.1 + 5.0 * u(rng), curve = u(rng);
    auto f = [=](double z) { return -slope * (z - root) - curve * std::pow(z - root, 3); };
    const auto cfg = interval(-3, 3, 32);
    const auto r = z_star(in_z(f), {0, 0}, cfg);
    ASSERT_EQ(r.status, ThresholdStatus::Interior);
    const double eps = (cfg.z_hi - cfg.z_lo) / std::pow(2.0, cfg.iterations);
    EXPECT_GE(f(r.z - eps), 0.0);
    EXPECT_LT(f(r.z + eps), 0.0);
  }
}

TEST(ZStarProperty, ExtraIterationsAreIdempotent) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int rep = 0; rep < 50; ++rep) {
    const double root = u(rng);
    auto f = in_z([=](double z) { return std::exp(-z) - std::exp(-root); });
    // 2^-32 < 1e-9, so refinement past 32 steps moves z* by at most the
    // shrinking bracket.
    const double a = z_star(f, {0, 0}, interval(-2, 2, 32)).z;
    const double b = z_star(f, {0, 0}, interval(-2, 2, 48)).z;
    EXPECT_NEAR(a, b, 1e-9 * 4.0);
  }
}
