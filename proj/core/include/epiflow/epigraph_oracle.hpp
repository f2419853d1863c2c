#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace epiflow {

/// Deterministic finite MDP with per-state reward and safety margin.
/// next[s][a] is the successor of state s under action a.
struct TabularMDP {
  std::vector<std::vector<int>> next;
  std::vector<double> reward;
  std::vector<double> safety;
  double gamma = 0.99;
  int horizon = 3000;

  std::size_t states() const { return reward.size(); }
  std::size_t actions() const { return next.empty() ? 0 : next.front().size(); }
  double max_abs_reward() const;
  double max_abs_safety() const;

  /// Throws std::invalid_argument on ragged or out-of-range tables, an
  /// empty action set, gamma outside (0, 1), or a non-positive horizon.
  void validate() const;
};

/// Parses the INI form:
///   [mdp]
///   states = 3
///   actions = 2
///   gamma = 0.9
///   horizon = 400        (optional)
///   reward = 0 1 2
///   safety = 1 1 -1
///   next.0 = 1 2         (one successor per action)
TabularMDP parse_mdp(const std::string& text);
TabularMDP load_mdp(const std::string& path);

/// Value table over a uniform z grid; value[s][k] = V-hat(s, z_k).
struct EpigraphGrid {
  std::vector<double> z;
  std::vector<std::vector<double>> value;
  int iterations = 0;
  double final_change = 0.0;

  double spacing() const { return z.size() > 1 ? z[1] - z[0] : 0.0; }
  double z_lo() const { return z.front(); }
  double z_hi() const { return z.back(); }
};

/// Uniform grid of n_z points. The span covers every achievable discounted
/// return plus one unit of slack, widened by the largest |safety| on both
/// sides so the end conditions used by value_iteration_epigraph are exact.
std::vector<double> default_z_grid(const TabularMDP& m, int n_z = 401);

/// Largest discounted return over action sequences that keep every visited
/// state safe forever; -infinity where no such sequence exists. Computed as
/// a safe-invariant-set fixed point followed by horizon-step masked DP.
std::vector<double> brute_force_constrained_value(const TabularMDP& m);

class OracleDidNotConverge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed point of V(s,z) = max_a min(safety(s), gamma * V(s', (z - r(s)) / gamma))
/// on the grid, with linear interpolation in z. Below the grid the value is
/// held at the end point; above it the value continues with slope -1. Starts
/// from V = safety(s) and stops when the sup-norm change drops below `tol`.
EpigraphGrid value_iteration_epigraph(const TabularMDP& m, std::vector<double> z_grid,
                                      double tol = 1e-10, int max_iterations = 200000);

/// Linear interpolation of one state's row with the same end conditions as
/// the value iteration.
double interpolate_row(const std::vector<double>& z, const std::vector<double>& row, double zq);

struct RecoveredValue {
  double value = 0.0;   // -infinity when infeasible
  bool saturated = false;  // V-hat >= 0 over the whole grid
};

/// Per state: the largest z with V-hat(s, z) >= 0, refined linearly at the
/// sign change; -infinity when V-hat < 0 already at the lowest grid point.
std::vector<RecoveredValue> recover_value(const EpigraphGrid& grid);

struct EquivalenceReport {
  std::vector<double> brute_force;
  std::vector<RecoveredValue> recovered;
  EpigraphGrid grid;
  double max_discrepancy = 0.0;  // over states both methods call feasible
  bool infeasibility_agrees = true;
};

EquivalenceReport check_equivalence(const TabularMDP& m, int n_z = 401);

}  // namespace epiflow
