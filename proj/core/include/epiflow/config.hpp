#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "epiflow/boat_env.hpp"
#include "epiflow/dataset.hpp"
#include "epiflow/evaluation.hpp"

namespace epiflow {

struct DatasetConfig {
  int n_traj = 2500;
  int horizon = 400;
  std::uint64_t seed = 0;
  std::size_t max_transitions = kDefaultTransitionCap;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

/// Everything a command needs. Sections: env, dataset, values, policy,
/// threshold, eval, run. Omitted keys keep their defaults.
struct RunConfig {
  EnvConfig env;
  DatasetConfig dataset;
  PipelineConfig pipeline;
  std::uint64_t seed = 0;
  std::string out = "out";
  int threads = 0;

  /// Sections that appeared in the parsed text.
  std::set<std::string> sections;

  /// Propagates shared settings (gamma, threads) into the stage configs and
  /// validates each of them. Throws std::invalid_argument.
  void finalize();

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.env == b.env && a.dataset == b.dataset && a.pipeline == b.pipeline && a.seed == b.seed &&
           a.out == b.out && a.threads == b.threads;
  }
};

/// Raised for unknown sections/keys and unparsable values; the message lists
/// every offending entry, not just the first.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Every key of every section, with doubles printed round-trip exactly.
std::string serialize_config(const RunConfig& cfg);

/// Throws ConfigError naming each missing section.
void require_sections(const RunConfig& cfg, const std::vector<std::string>& names);

}  // namespace epiflow
