#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epiflow/boat_env.hpp"
#include "epiflow/common.hpp"

namespace epiflow {

struct Transition {
  State x;
  Action a;
  double r = 0.0;
  double ell = 0.0;
  State x_next;
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct DatasetMeta {
  EnvConfig env;
  int n_traj = 0;
  int horizon = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

/// Immutable once built. Transitions are stored trajectory by trajectory.
struct OfflineDataset {
  std::vector<Transition> transitions;
  DatasetMeta meta;
  double z_min = 0.0;
  double z_max = 0.0;

  std::size_t size() const { return transitions.size(); }
  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

inline constexpr std::size_t kDefaultTransitionCap = 50'000'000;

/// Uniform initial states over the box, uniform-disc random actions,
/// `horizon` steps per trajectory. z_min / z_max are the extremes of the
/// discounted suffix returns of every trajectory.
OfflineDataset generate(const EnvConfig& cfg, int n_traj, int horizon, std::uint64_t seed,
                        std::size_t max_transitions = kDefaultTransitionCap, int threads = 1);

/// Uniform draw from the unit disc (angle uniform, radius = sqrt(u)).
Action sample_disc_action(Rng& rng);

struct SampledTransition {
  Transition t;
  double z = 0.0;
  double z_next = 0.0;
};

/// Uniform with-replacement minibatch with z ~ U[z_min, z_max] and
/// z' = (z - r) / gamma.
std::vector<SampledTransition> sample_batch(const OfflineDataset& ds, int batch, Rng& rng);

/// Largest deviation of stored r / ell / x_next from a recomputation.
struct AuditResult {
  double max_reward_error = 0.0;
  double max_safety_error = 0.0;
  double max_next_state_error = 0.0;
};
AuditResult audit(const OfflineDataset& ds);

/// Versioned header + little-endian float64 rows. Throws FormatError.
void save(const OfflineDataset& ds, const std::string& path);
OfflineDataset load(const std::string& path);
std::string serialize(const OfflineDataset& ds);
OfflineDataset deserialize(const std::string& bytes);

/// Same columns as the binary rows, for inspection.
void export_csv(const OfflineDataset& ds, const std::string& path);

}  // namespace epiflow
