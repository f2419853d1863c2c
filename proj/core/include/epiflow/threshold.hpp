#pragma once

#include <functional>
#include <vector>

#include "epiflow/boat_env.hpp"
#include "epiflow/mlp.hpp"

namespace epiflow {

struct ThresholdConfig {
  double z_lo = 0.0;
  double z_hi = 1.0;
  int iterations = 32;
  /// Uniform sign-scan points used to detect non-monotone V-hat and to pick
  /// the bracket at the largest sign change. 0 disables the scan.
  int scan_points = 64;

  /// Throws std::invalid_argument.
  void validate() const;
  friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

enum class ThresholdStatus { Interior, Infeasible, Saturated };
const char* status_name(ThresholdStatus s);

struct ThresholdResult {
  double z = 0.0;
  ThresholdStatus status = ThresholdStatus::Interior;
  int sign_changes = 0;  // counted by the scan; 0 when the scan is disabled
};

/// Scalar V-hat(x, z).
using ScalarEvaluator = std::function<double(const State&, double)>;
/// Column-batched V-hat: x is 2 x B, z has B entries.
using BatchEvaluator = std::function<RowVector(const Matrix&, const RowVector&)>;

/// Largest z in [z_lo, z_hi] with V-hat(x, z) >= 0, by bisection. Infeasible
/// when V-hat(x, z_lo) < 0, Saturated when V-hat(x, z_hi) >= 0. Throws
/// std::domain_error on a non-finite evaluation.
ThresholdResult z_star(const ScalarEvaluator& vhat, const State& x, const ThresholdConfig& cfg);

/// Element-wise z_star with all states bisected in lockstep, one batched
/// evaluation per bisection step.
std::vector<ThresholdResult> z_star_batch(const BatchEvaluator& vhat, const std::vector<State>& states,
                                          const ThresholdConfig& cfg);

}  // namespace epiflow
