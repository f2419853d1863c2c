#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "epiflow/binary_io.hpp"

int main(int argc, char** argv) {
  using namespace epiflow::cli;
  CLI::App app{"epiflow: epigraph-guided flow policies for state-constrained offline control"};
  app.require_subcommand(1);

  Options opt;
  bool verbose = false;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto common = [&](CLI::App* sub, bool needs_config = true) {
    auto* c = sub->add_option("--config", opt.config, needs_config ? "Run config (INI)" : "Tabular MDP file (INI)");
    c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides run.out)");
    sub->add_option("--seed", seed, "Training seed (overrides run.seed)");
    sub->add_option("--threads", threads, "Worker threads (default: EPIFLOW_THREADS or 1)");
    sub->add_flag("--deterministic", opt.deterministic,
                  "Require bit-reproducible results (always the case; accepted for scripting)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the offline dataset");
  auto* tv = app.add_subcommand("train-values", "Train the value functions");
  auto* tp = app.add_subcommand("train-policy", "Train the flow policy");
  auto* ev = app.add_subcommand("eval", "Evaluate the trained policy");
  auto* ab = app.add_subcommand("ablate", "Run an ablation sweep");
  auto* orc = app.add_subcommand("oracle", "Check the epigraph equivalence on a tabular MDP");
  for (auto* s : {gen, tv, tp, ev, ab}) common(s);
  common(orc, false);
  ab->add_option("kind", opt.ablation, "tau | lambda | n | perturb | zsens")
      ->required()
      ->check(CLI::IsMember({"tau", "lambda", "n", "perturb", "zsens"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  for (auto* s : {gen, tv, tp, ev, ab, orc}) {
    if (s->count("--out")) opt.out = out;
    if (s->count("--seed")) opt.seed = seed;
    if (s->count("--threads")) opt.threads = threads;
  }

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*tv) return cmd_train_values(opt);
    if (*tp) return cmd_train_policy(opt);
    if (*ev) return cmd_eval(opt);
    if (*ab) return cmd_ablate(opt);
    if (*orc) return cmd_oracle(opt);
  } catch (const epiflow::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const epiflow::FormatError& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
