#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "epiflow/common.hpp"
#include "epiflow/dataset.hpp"
#include "epiflow/epigraph_values.hpp"
#include "epiflow/mlp.hpp"
#include "epiflow/threshold.hpp"

namespace epiflow {

/// Straight-line path from noise to data: a_t = (1 - t) eps + t a, u_t = a - eps.
/// Throws std::invalid_argument for t outside [0, 1] or mismatched sizes.
std::pair<Vector, Vector> path_point(const Vector& a_data, const Vector& eps, double t);

/// min(exp(alpha * adv), clip) with clip = clip_feasible or clip_infeasible.
/// The exponential is only taken below log(clip), so it never overflows.
double guidance_weight(double adv, double alpha, bool feasible, double clip_feasible = 100.0,
                       double clip_infeasible = 150.0);

/// Velocity-field minibatch. Network input rows are [a_t; cond; t].
struct FlowBatch {
  Matrix a_t;   // d x B
  Matrix cond;  // c x B (c may be 0)
  RowVector t;  // B
  Matrix u;     // d x B
  RowVector w;  // B

  Matrix network_input() const;
};

struct FlowLoss {
  double value = 0.0;
  Vector grad;
};

/// mean_i w_i * ||v(a_t, cond, t) - u||^2 and its parameter gradient.
FlowLoss flow_matching_loss(const Mlp& net, const FlowBatch& batch);

/// Behaviour samples with their guidance weights.
struct WeightedFlowData {
  Matrix actions;     // d x n
  Matrix cond;        // c x n
  RowVector weights;  // n
};

struct FlowTrainConfig {
  int batch_size = 256;
  int steps = 100000;
  double lr = 3e-4;
  /// Linear learning-rate decay to lr * lr_final_fraction over the run.
  double lr_final_fraction = 1.0;
  std::uint64_t seed = 0;
  int log_every = 1000;

  void validate() const;
  friend bool operator==(const FlowTrainConfig&, const FlowTrainConfig&) = default;
};

/// Adam on flow_matching_loss with t ~ U[0, 1] and eps ~ N(0, I) drawn per
/// sample. Returns the per-interval mean losses. Throws TrainingDiverged on a
/// non-finite loss.
std::vector<double> train_weighted_flow(Mlp& net, const WeightedFlowData& data,
                                        const FlowTrainConfig& cfg);

/// Explicit Euler integration of da/dt = v(a, cond, t) from t = 0 to 1.
/// Throws std::domain_error if the state becomes non-finite.
Matrix integrate_flow(const Mlp& net, Matrix a0, const Matrix& cond, int steps);

struct PolicyConfig {
  int integration_steps = 5;
  int candidates = 8;
  double alpha = 100.0;
  double clip_feasible = 100.0;
  double clip_infeasible = 150.0;
  bool condition_on_z = false;
  std::vector<int> hidden{256, 256};
  FlowTrainConfig train;

  void validate() const;
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct FlowPolicy {
  Mlp net;
  PolicyConfig config;
  InputScaling scaling;

  /// Conditioning rows for states (and budgets when condition_on_z).
  Matrix condition(const Matrix& x, const RowVector& z) const;
  int cond_dim() const { return config.condition_on_z ? 3 : 2; }

  friend bool operator==(const FlowPolicy& a, const FlowPolicy& b) {
    return a.net == b.net && a.config == b.config && a.scaling == b.scaling;
  }
};

/// Frozen value bundle plus the bisection settings used to place z*(x).
class AdvantageEvaluator {
 public:
  AdvantageEvaluator(const ValueBundle& bundle, ThresholdConfig cfg);

  const ValueBundle& bundle() const { return *bundle_; }
  const ThresholdConfig& threshold() const { return cfg_; }

  std::vector<ThresholdResult> z_star(const std::vector<State>& states) const;
  /// min-head Q-hat(x, z, a) - V-hat(x, z), column-wise.
  RowVector advantage(const Matrix& x, const RowVector& z, const Matrix& a) const;

 private:
  const ValueBundle* bundle_;
  ThresholdConfig cfg_;
};

/// Per-transition guidance weights for the whole dataset, with z*(x)
/// computed once per stored state.
WeightedFlowData guidance_data(const OfflineDataset& ds, const AdvantageEvaluator& adv,
                               const PolicyConfig& cfg, const InputScaling& scaling);

FlowPolicy train_policy(const OfflineDataset& ds, const AdvantageEvaluator& adv, const PolicyConfig& cfg,
                        std::vector<double>* loss_log = nullptr);

/// One action per state: N Gaussian base samples per state (drawn from that
/// state's generator), integrated, projected onto the unit disc, and the
/// candidate with the largest min-head Q-hat(x, z*(x), a) kept.
std::vector<Action> sample_actions(const FlowPolicy& p, const AdvantageEvaluator& adv,
                                   const std::vector<State>& states, std::vector<Rng*> rngs);
Action sample_action(const FlowPolicy& p, const AdvantageEvaluator& adv, const State& x, Rng& rng);

/// pi(a) proportional to pi_beta(a) exp(alpha * adv(a)), computed stably.
std::vector<double> tilted_distribution(const std::vector<double>& pi_beta, const std::vector<double>& adv,
                                        double alpha);
/// sum pi adv - (1 / alpha) KL(pi || pi_beta).
double regularized_objective(const std::vector<double>& pi, const std::vector<double>& pi_beta,
                             const std::vector<double>& adv, double alpha);

/// Sampler settings manifest followed by the velocity-network checkpoint.
void save_policy(const FlowPolicy& p, const std::string& path);
FlowPolicy load_policy(const std::string& path);

}  // namespace epiflow
