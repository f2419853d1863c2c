#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "epiflow/evaluation.hpp"
#include "support/gradient_suite.hpp"

using namespace epiflow;

namespace {

// Full-speed push against the drift along x2 = 0: the boat creeps right at
// 1 unit per second from wherever it starts.
const FunctionController kCreep([](const State&) { return Action{-1.0, 0.0}; });
const FunctionController kCoast([](const State&) { return Action{0.0, 0.0}; });

EvalConfig from(std::vector<State> starts, int episodes = 4) {
  EvalConfig c;
  c.n_episodes = episodes;
  c.seeds = {0};
  c.initial_states = std::move(starts);
  c.threads = 1;
  return c;
}

void expect_same(const SeedReport& a, const SeedReport& b) {
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.episodes, b.episodes);
  EXPECT_EQ(a.mean_reward, b.mean_reward);
  EXPECT_EQ(a.sd_reward, b.sd_reward);
  EXPECT_EQ(a.safety_rate, b.safety_rate);
  EXPECT_EQ(a.mean_cost, b.mean_cost);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Rollout, CreepingFromTheGoalIsSafeWithKnownReward) {
  const EnvConfig env;
  const EvalReport r = rollout(kCreep, env, from({env.goal}));
  // x1 after t steps is min(0.5 + 0.005 t, 2); reward is charged at the
  // pre-step state.
  double want = 0.0;
  for (int t = 0; t < 400; ++t) want += -0.1 * std::abs(std::min(0.5 + 0.005 * t, 2.0) - 0.5);
  EXPECT_NEAR(r.aggregate.mean_reward, want, 1e-9);
  EXPECT_EQ(r.aggregate.safety_rate, 100.0);
  EXPECT_EQ(r.aggregate.mean_cost, 0.0);
}

TEST(Rollout, CoastingThroughAnObstacleCountsCost) {
  const EnvConfig env;
  const EvalReport r = rollout(kCoast, env, from({{-1.5, 0.5}}));
  // Drift 2 - 0.5 * 0.25 carries the boat across the 0.8-wide disc.
  const double speed = (2.0 - 0.125) * env.dt;
  int want = 0;
  for (int t = 0; t < 400; ++t) {
    const double x1 = std::min(-1.5 + speed * t, 2.0);
    if (std::hypot(x1 + 0.5, 0.0) < 0.4) ++want;
  }
  EXPECT_EQ(r.aggregate.safety_rate, 0.0);
  EXPECT_EQ(r.aggregate.mean_cost, want);
  EXPECT_NEAR(want, 0.8 / speed, 1.0);
}

TEST(Rollout, DeterministicAcrossRunsAndThreads) {
  const EnvConfig env;
  const FunctionController wander([](const State& s) { return project_to_disc({std::sin(3 * s.x2), std::cos(2 * s.x1)}); });
  EvalConfig cfg;
  cfg.n_episodes = 30;
  cfg.seeds = {3, 4};
  cfg.horizon = 100;
  cfg.perturbation = 0.1;
  cfg.threads = 1;
  const EvalReport a = rollout(wander, env, cfg);
  const EvalReport b = rollout(wander, env, cfg);
  cfg.threads = 3;
  const EvalReport c = rollout(wander, env, cfg);
  ASSERT_EQ(a.per_seed.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    expect_same(a.per_seed[i], b.per_seed[i]);
    expect_same(a.per_seed[i], c.per_seed[i]);
  }
  expect_same(a.aggregate, c.aggregate);
}

TEST(Rollout, AggregatePoolsAllEpisodes) {
  const EnvConfig env;
  EvalConfig cfg = from({env.goal, {-1.5, 0.5}}, 2);
  cfg.seeds = {0, 1};
  const EvalReport r = rollout(kCoast, env, cfg);
  EXPECT_EQ(r.aggregate.episodes, 4);
  EXPECT_EQ(r.aggregate.safety_rate, 50.0);
  EXPECT_NEAR(r.aggregate.mean_cost, 0.5 * (r.per_seed[0].mean_cost + r.per_seed[1].mean_cost), 1e-12);
}

TEST(InitialStates, AlwaysSafeAndInsideTheBox) {
  const EnvConfig env;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    Rng rng(i);
    const State s = sample_initial_state(env, rng, 100000);
    EXPECT_GE(safety(s, env), 0.0);
    EXPECT_GE(s.x1, env.box.x1_min);
    EXPECT_LE(s.x1, env.box.x1_max);
    EXPECT_GE(s.x2, env.box.x2_min);
    EXPECT_LE(s.x2, env.box.x2_max);
  }
}

TEST(RolloutProperty, SafetyRateIsFullExactlyWhenCostIsZero) {
  const EnvConfig env;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 12; ++rep) {
    const double p = u(rng), q = u(rng);
    const FunctionController c([=](const State& s) { return project_to_disc({p - s.x2, q + 0.3 * s.x1}); });
    EvalConfig cfg;
    cfg.n_episodes = 20;
    cfg.seeds = {static_cast<std::uint64_t>(rep)};
    cfg.horizon = 150;
    const SeedReport r = rollout(c, env, cfg).aggregate;
    EXPECT_EQ(r.safety_rate == 100.0, r.mean_cost == 0.0);
  }
}

TEST(Perturbation, LevelZeroMatchesPlainRollout) {
  const EnvConfig env;
  EvalConfig cfg;
  cfg.n_episodes = 20;
  cfg.seeds = {1, 2};
  cfg.horizon = 120;
  cfg.perturbation_levels = {0.0, 0.2};
  const auto sweep = perturbation_sweep(kCoast, env, cfg);
  ASSERT_EQ(sweep.size(), 2u);
  expect_same(sweep[0].aggregate, rollout(kCoast, env, cfg).aggregate);
}

TEST(Perturbation, NoiseNearTheGoalStaysSafe) {
  const EnvConfig env;
  EvalConfig cfg = from({env.goal}, 50);
  cfg.perturbation_levels = {0.05, 0.1, 0.2};
  for (const auto& r : perturbation_sweep(kCreep, env, cfg)) EXPECT_EQ(r.aggregate.safety_rate, 100.0);
}

TEST(Perturbation, NoiseIsAppliedAndReprojected) {
  const EnvConfig env;
  EvalConfig cfg = from({env.goal}, 10);
  const double clean = rollout(kCreep, env, cfg).aggregate.mean_reward;
  cfg.perturbation = 0.2;
  const double noisy = rollout(kCreep, env, cfg).aggregate.mean_reward;
  EXPECT_NE(clean, noisy);
}

TEST(ZSensitivity, ConstantEvaluatorHasZeroVariation) {
  const BatchEvaluator flat = [](const Matrix&, const RowVector& z) { return RowVector::Constant(z.size(), 0.7); };
  const auto states = state_mesh(StateBox{}, 5, 4);
  ASSERT_EQ(states.size(), 20u);
  const ZSensitivity r = z_sensitivity_report(flat, states, uniform_grid(-1.0, 1.0, 7));
  EXPECT_EQ(r.variation, 0.0);
  EXPECT_EQ(r.mesh.rows(), 20);
  EXPECT_EQ(r.mesh.cols(), 7);
}

TEST(ZSensitivity, LinearEvaluatorVariation) {
  const BatchEvaluator lin = [](const Matrix& x, const RowVector& z) {
    return RowVector((x.row(0).array() - 2.0 * z.array()).matrix());
  };
  const ZSensitivity r = z_sensitivity_report(lin, state_mesh(StateBox{}, 6, 6), uniform_grid(-1.0, 0.5, 4));
  EXPECT_NEAR(r.variation, 2.0 * 1.5, 1e-12);
  EXPECT_NEAR(r.mean_value.front() - r.mean_value.back(), 3.0, 1e-12);
}

TEST(ZSensitivity, RandomBundleIsFinite) {
  const ValueBundle b = ref::random_bundle(2);
  const double v = z_variation(b, StateBox{});
  EXPECT_TRUE(std::isfinite(v));
  const BatchEvaluator e = [&](const Matrix& x, const RowVector& z) { return b.v_hat_at(x, z); };
  const ZSensitivity r = z_sensitivity_report(e, state_mesh(StateBox{}, 41, 41), uniform_grid(b.z_min, b.z_max, 2));
  EXPECT_TRUE(r.mesh.allFinite());
  EXPECT_NEAR(r.variation, v, 1e-12);
}

TEST(Grids, UniformGridAndMesh) {
  const auto g = uniform_grid(-3.0, 1.0, 5);
  EXPECT_EQ(g, (std::vector<double>{-3.0, -2.0, -1.0, 0.0, 1.0}));
  const StateBox box;
  const auto m = state_mesh(box, 3, 2);
  EXPECT_EQ(m.front().x1, box.x1_min);
  EXPECT_EQ(m.front().x2, box.x2_min);
  EXPECT_EQ(m.back().x1, box.x1_max);
  EXPECT_EQ(m.back().x2, box.x2_max);
}

TEST(Reports, CsvAndJsonCarryEverySeed) {
  const EnvConfig env;
  EvalConfig cfg = from({env.goal}, 3);
  cfg.seeds = {4, 9};
  const EvalReport r = rollout(kCreep, env, cfg);
  const auto dir = std::filesystem::temp_directory_path();
  write_report_csv(r, "base", (dir / "epiflow_report.csv").string());
  const std::string csv = slurp(dir / "epiflow_report.csv");
  EXPECT_NE(csv.find("base"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header and one row per seed

  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j["per_seed"].size(), 2u);
  EXPECT_EQ(j["aggregate"]["episodes"], 6);
  EXPECT_EQ(j["aggregate"]["safety_rate"], 100.0);

  SweepRow row;
  row.parameter = "tau";
  row.value = 0.5;
  row.report = r.aggregate;
  SweepRow failed = row;
  failed.error = "diverged";
  write_sweep_csv({row, failed}, (dir / "epiflow_sweep.csv").string());
  EXPECT_NE(slurp(dir / "epiflow_sweep.csv").find("diverged"), std::string::npos);
  const auto sj = nlohmann::json::parse(sweep_json({row, failed}));
  EXPECT_EQ(sj.size(), 2u);
  std::filesystem::remove(dir / "epiflow_report.csv");
  std::filesystem::remove(dir / "epiflow_sweep.csv");
}

TEST(EvalConfigCheck, RejectsBadValues) {
  EvalConfig c;
  c.n_episodes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EvalConfig{};
  c.perturbation = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EvalConfig{};
  c.seeds.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
