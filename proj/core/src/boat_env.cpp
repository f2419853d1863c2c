#include "epiflow/boat_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace epiflow {

void EnvConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("env.dt must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("env.gamma must lie in (0, 1)");
  if (!std::isfinite(reward_scale)) throw std::invalid_argument("env.reward_scale must be finite");
  if (episode_length < 1) throw std::invalid_argument("env.episode_length must be >= 1");
  if (!(box.x1_min < box.x1_max && box.x2_min < box.x2_max))
    throw std::invalid_argument("env box is empty");
  for (const auto& o : obstacles) {
    if (!(o.radius > 0.0)) throw std::invalid_argument("obstacle radius must be positive");
  }
}

double reward(const State& s, const EnvConfig& cfg) {
  return -cfg.reward_scale * std::hypot(s.x1 - cfg.goal.x1, s.x2 - cfg.goal.x2);
}

double safety(const State& s, const EnvConfig& cfg) {
  double ell = std::numeric_limits<double>::infinity();
  for (const auto& o : cfg.obstacles) {
    ell = std::min(ell, std::hypot(s.x1 - o.center.x1, s.x2 - o.center.x2) - o.radius);
  }
  return ell;
}

double action_norm(const Action& a) { return std::hypot(a.a1, a.a2); }

Action project_to_disc(const Action& a) {
  const double n = action_norm(a);
  if (n <= 1.0) return a;
  return {a.a1 / n, a.a2 / n};
}

State clamp_to_box(const State& s, const StateBox& box) {
  return {std::clamp(s.x1, box.x1_min, box.x1_max), std::clamp(s.x2, box.x2_min, box.x2_max)};
}

State integrate_dynamics(const State& s, const Action& a, const EnvConfig& cfg) {
  const double drift = 2.0 - 0.5 * s.x2 * s.x2;
  State next{s.x1 + (a.a1 + drift) * cfg.dt, s.x2 + a.a2 * cfg.dt};
  return clamp_to_box(next, cfg.box);
}

StepResult step(const State& s, const Action& a, const EnvConfig& cfg, int step_index) {
  if (!(action_norm(a) <= 1.0 + kActionNormTolerance)) {
    throw std::invalid_argument("action norm " + std::to_string(action_norm(a)) +
                                " exceeds the unit disc");
  }
  StepResult out;
  out.next = integrate_dynamics(s, a, cfg);
  out.reward = reward(s, cfg);
  out.ell = safety(s, cfg);
  out.done = step_index + 1 >= cfg.episode_length;
  return out;
}

double next_budget(double z, double r, double gamma) { return (z - r) / gamma; }

double previous_budget(double z_next, double r, double gamma) { return gamma * z_next + r; }

AugmentedState step_augmented(const AugmentedState& as, const Action& a, const EnvConfig& cfg) {
  if (!std::isfinite(as.z)) throw std::invalid_argument("budget z must be finite");
  const StepResult res = step(as.state, a, cfg);
  return {res.next, next_budget(as.z, res.reward, cfg.gamma)};
}

}  // namespace epiflow
