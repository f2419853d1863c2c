#pragma once

#include <vector>

namespace epiflow {

/// Boat position: x1 along the river axis, x2 across it.
struct State {
  double x1 = 0.0;
  double x2 = 0.0;

  friend bool operator==(const State&, const State&) = default;
};

/// Velocity command. Admissible actions satisfy a1^2 + a2^2 <= 1.
struct Action {
  double a1 = 0.0;
  double a2 = 0.0;

  friend bool operator==(const Action&, const Action&) = default;
};

/// A state paired with the remaining performance budget z.
struct AugmentedState {
  State state;
  double z = 0.0;
};

struct Obstacle {
  State center;
  double radius = 0.4;

  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

/// Axis-aligned state box. Rollouts clamp into it.
struct StateBox {
  double x1_min = -3.0;
  double x1_max = 2.0;
  double x2_min = -2.0;
  double x2_max = 2.0;

  friend bool operator==(const StateBox&, const StateBox&) = default;
};

struct EnvConfig {
  double dt = 0.005;
  double gamma = 0.99;
  State goal{0.5, 0.0};
  double reward_scale = 0.1;
  std::vector<Obstacle> obstacles{{{-0.5, 0.5}, 0.4}, {{-1.0, -1.2}, 0.4}};
  int episode_length = 400;
  StateBox box;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

inline constexpr double kActionNormTolerance = 1e-9;

/// -C * ||s - goal||.
double reward(const State& s, const EnvConfig& cfg);

/// Signed distance to the nearest obstacle boundary; negative inside.
double safety(const State& s, const EnvConfig& cfg);

double action_norm(const Action& a);

/// Scales `a` back onto the unit disc if its norm exceeds one.
Action project_to_disc(const Action& a);

State clamp_to_box(const State& s, const StateBox& box);

/// Raw drift dynamics followed by clamping. Performs no action-norm check.
State integrate_dynamics(const State& s, const Action& a, const EnvConfig& cfg);

struct StepResult {
  State next;
  double reward = 0.0;  // evaluated at the pre-step state
  double ell = 0.0;     // evaluated at the pre-step state
  bool done = false;
};

/// One environment step. `step_index` is the zero-based position within the
/// episode; `done` is set on the last step. Throws std::invalid_argument if
/// the action leaves the unit disc by more than kActionNormTolerance.
StepResult step(const State& s, const Action& a, const EnvConfig& cfg, int step_index = 0);

/// Budget update z' = (z - r(x)) / gamma.
double next_budget(double z, double r, double gamma);

/// Inverse of next_budget: z = gamma * z' + r.
double previous_budget(double z_next, double r, double gamma);

AugmentedState step_augmented(const AugmentedState& as, const Action& a, const EnvConfig& cfg);

}  // namespace epiflow
