#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epiflow/boat_env.hpp"
#include "epiflow/common.hpp"
#include "epiflow/dataset.hpp"
#include "epiflow/epigraph_values.hpp"
#include "epiflow/flow_policy.hpp"
#include "epiflow/threshold.hpp"

namespace epiflow {

/// Maps a batch of states to actions. Implementations must be safe to call
/// concurrently and must draw randomness for state i only from rngs[i].
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::vector<Action> act(const std::vector<State>& states, std::vector<Rng*> rngs) const = 0;
};

/// Deterministic per-state rule, e.g. a hand-coded test controller.
class FunctionController final : public Controller {
 public:
  explicit FunctionController(std::function<Action(const State&)> f) : f_(std::move(f)) {}
  std::vector<Action> act(const std::vector<State>& states, std::vector<Rng*> rngs) const override;

 private:
  std::function<Action(const State&)> f_;
};

/// Flow policy with value-guided candidate selection.
class FlowController final : public Controller {
 public:
  FlowController(const FlowPolicy& policy, const AdvantageEvaluator& adv) : policy_(&policy), adv_(&adv) {}
  std::vector<Action> act(const std::vector<State>& states, std::vector<Rng*> rngs) const override;

 private:
  const FlowPolicy* policy_;
  const AdvantageEvaluator* adv_;
};

struct EvalConfig {
  int n_episodes = 500;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int horizon = 400;
  std::vector<double> perturbation_levels{0.05, 0.10, 0.20};
  /// Gaussian action noise with sigma = fraction * action bound, applied
  /// after the controller and followed by re-projection onto the disc.
  double perturbation = 0.0;
  /// When non-empty, episodes start here (cycled) instead of sampling.
  std::vector<State> initial_states;
  int max_initial_tries = 100000;
  int threads = 0;

  void validate() const;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct EpisodeStats {
  double reward = 0.0;  // undiscounted sum over the episode
  int cost = 0;         // steps with ell(x) < 0
  State initial;
};

struct SeedReport {
  std::uint64_t seed = 0;
  int episodes = 0;
  double mean_reward = 0.0;
  double sd_reward = 0.0;
  double safety_rate = 0.0;  // percent of episodes with zero cost
  double mean_cost = 0.0;
  double seconds_per_action = 0.0;
};

struct EvalReport {
  std::vector<SeedReport> per_seed;
  SeedReport aggregate;  // pooled over every episode of every seed
};

/// Safe initial state for episode `index`: uniform over the box, rejecting
/// ell(x) < 0, drawn from the episode's own generator.
State sample_initial_state(const EnvConfig& env, Rng& rng, int max_tries);

/// Runs cfg.n_episodes episodes for one seed in lockstep (one controller
/// call per time step per worker chunk). Episode i uses substream (seed, i).
std::vector<EpisodeStats> run_episodes(const Controller& c, const EnvConfig& env, const EvalConfig& cfg,
                                       std::uint64_t seed, double* seconds_per_action = nullptr);

SeedReport summarize(std::uint64_t seed, const std::vector<EpisodeStats>& episodes,
                     double seconds_per_action = 0.0);

/// Every seed in cfg.seeds, plus the pooled aggregate.
EvalReport rollout(const Controller& c, const EnvConfig& env, const EvalConfig& cfg);

/// One report per level in cfg.perturbation_levels (level 0 allowed).
std::vector<EvalReport> perturbation_sweep(const Controller& c, const EnvConfig& env, const EvalConfig& cfg);

/// Everything needed to go from a dataset to an evaluated policy.
struct PipelineConfig {
  ValueTrainConfig values;
  PolicyConfig policy;
  ThresholdConfig threshold;
  /// Use the dataset's [z_min, z_max] as the bisection interval.
  bool threshold_from_dataset = true;
  EvalConfig eval;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Bisection settings for a bundle: the configured interval or the
/// dataset range stored in the bundle.
ThresholdConfig threshold_for(const PipelineConfig& cfg, const ValueBundle& bundle);

/// Trained artifacts for one seed.
struct TrainedPipeline {
  ValueBundle bundle;
  ThresholdConfig threshold;
  FlowPolicy policy;
  bool has_policy = false;
};

/// Values (seeded with `seed`), then the policy unless `with_policy` is off.
TrainedPipeline train_pipeline(const OfflineDataset& ds, const PipelineConfig& cfg, std::uint64_t seed,
                               bool with_policy = true);

/// Flow controller for a trained pipeline evaluated on the given seeds.
EvalReport evaluate_pipeline(const TrainedPipeline& tp, const EnvConfig& env, const EvalConfig& cfg);

/// Mean over a 41 x 41 box mesh of V-hat(x, z_min) - V-hat(x, z_max).
double z_variation(const ValueBundle& bundle, const StateBox& box);

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  std::uint64_t seed = 0;
  SeedReport report;
  double z_variation = 0.0;
  double relative_reward = 0.0;  // percent of the unperturbed reward (perturbation sweep)
  std::string error;             // non-empty when the cell failed
};

/// Retrains values and policy for each (value, seed); parameter is "tau" or
/// "lambda". Each row is evaluated with seed-specific episodes. Training
/// failures are recorded in the row and the sweep continues.
std::vector<SweepRow> value_sweep(const OfflineDataset& ds, const PipelineConfig& base,
                                  const std::string& parameter, const std::vector<double>& grid);

/// Trains once per seed and re-evaluates with N candidates for each N,
/// reporting wall-clock seconds per action.
std::vector<SweepRow> candidate_sweep(const OfflineDataset& ds, const PipelineConfig& base,
                                      const std::vector<int>& grid);

/// Trains once per seed and evaluates at each perturbation level.
std::vector<SweepRow> perturbation_table(const OfflineDataset& ds, const PipelineConfig& base);

struct ZSensitivity {
  std::vector<double> z;
  std::vector<double> mean_value;  // over states, per z
  std::vector<double> min_value;
  std::vector<double> max_value;
  /// mean over states of V(x, z.front()) - V(x, z.back()).
  double variation = 0.0;
  Matrix mesh;  // states x z
};

/// Evaluates V-hat on every state at every z.
ZSensitivity z_sensitivity_report(const BatchEvaluator& vhat, const std::vector<State>& states,
                                  const std::vector<double>& z_grid);
/// Uniform nx x ny mesh over the box (row-major in x2, then x1).
std::vector<State> state_mesh(const StateBox& box, int nx, int ny);
std::vector<double> uniform_grid(double lo, double hi, int n);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& label, const std::string& path);
/// x1, x2, then one column per z.
void write_mesh_csv(const ZSensitivity& z, const std::vector<State>& states, const std::string& path);
/// Aggregate summary (pooled and per-seed) as JSON.
std::string report_json(const EvalReport& report);
std::string sweep_json(const std::vector<SweepRow>& rows);

}  // namespace epiflow
