#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "epiflow/config.hpp"

namespace epiflow::cli {

struct Options {
  std::string config;  // INI run config (MDP file for `oracle`)
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  std::string ablation;  // tau | lambda | n | perturb | zsens
};

/// An input file a stage depends on is absent.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loads the config and applies --out / --seed / --threads.
RunConfig resolve(const Options& opt);

int cmd_gen_data(const Options& opt);
int cmd_train_values(const Options& opt);
int cmd_train_policy(const Options& opt);
int cmd_eval(const Options& opt);
int cmd_ablate(const Options& opt);
int cmd_oracle(const Options& opt);

/// Artifact names inside the output directory.
inline constexpr const char* kDatasetFile = "dataset.bin";
inline constexpr const char* kValuesFile = "values.ckpt";
inline constexpr const char* kPolicyFile = "policy.ckpt";

}  // namespace epiflow::cli
