#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "epiflow/binary_io.hpp"
#include "epiflow/dataset.hpp"
#include "epiflow/epigraph_oracle.hpp"
#include "epiflow/epigraph_values.hpp"
#include "epiflow/evaluation.hpp"
#include "epiflow/flow_policy.hpp"

namespace fs = std::filesystem;

namespace epiflow::cli {
namespace {

std::string in_out(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw MissingArtifact("missing upstream artifact '" + path + "' (produced by `epiflow " + producer + "`)");
  }
}

std::string file_sha1(const std::string& path) { return git_blob_sha1(read_file(path)); }

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

/// <stage>.manifest.json: the exact config, its hash and content hashes of
/// every input and output file.
void write_manifest(const RunConfig& cfg, const std::string& stage, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  const std::string text = serialize_config(cfg);
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = git_blob_sha1(text);
  j["config"] = text;
  j["seed"] = cfg.seed;
  for (const auto& p : inputs) j["inputs"][fs::path(p).filename().string()] = file_sha1(p);
  for (const auto& p : outputs) j["outputs"][fs::path(p).filename().string()] = file_sha1(p);
  write_text(in_out(cfg, stage + ".manifest.json"), j.dump(2) + "\n");
}

void check_value_architecture(const RunConfig& cfg, const ValueBundle& b) {
  if (b.config.hidden != cfg.pipeline.values.hidden) {
    throw std::invalid_argument("value checkpoint architecture does not match [values] hidden in the config");
  }
}

void check_policy_architecture(const RunConfig& cfg, const FlowPolicy& p) {
  if (p.config.hidden != cfg.pipeline.policy.hidden ||
      p.config.condition_on_z != cfg.pipeline.policy.condition_on_z) {
    throw std::invalid_argument("policy checkpoint architecture does not match [policy] in the config");
  }
}

OfflineDataset load_dataset(const RunConfig& cfg) {
  const auto path = in_out(cfg, kDatasetFile);
  require_file(path, "gen-data");
  return load(path);
}

/// Config as given, but trained with the dataset's own discount.
PipelineConfig pipeline_for(const RunConfig& cfg, const OfflineDataset& ds) {
  PipelineConfig p = cfg.pipeline;
  p.values.gamma = ds.meta.env.gamma;
  return p;
}

void write_sweep(const RunConfig& cfg, const std::string& name, const std::vector<SweepRow>& rows,
                 const std::vector<std::string>& inputs) {
  const auto csv = in_out(cfg, name + ".csv");
  const auto json = in_out(cfg, name + ".json");
  write_sweep_csv(rows, csv);
  write_text(json, sweep_json(rows) + "\n");
  write_manifest(cfg, name, inputs, {csv, json});
  for (const auto& r : rows) {
    std::printf("%s=%g seed=%llu reward=%.3f safety=%.1f cost=%.3f sec/action=%.3g%s%s\n", r.parameter.c_str(),
                r.value, static_cast<unsigned long long>(r.seed), r.report.mean_reward, r.report.safety_rate,
                r.report.mean_cost, r.report.seconds_per_action, r.error.empty() ? "" : " error: ",
                r.error.c_str());
  }
}

}  // namespace

RunConfig resolve(const Options& opt) {
  RunConfig cfg = load_config(opt.config);
  if (opt.out) cfg.out = *opt.out;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  cfg.threads = resolve_threads(cfg.threads);
  cfg.finalize();
  fs::create_directories(cfg.out);
  return cfg;
}

int cmd_gen_data(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  require_sections(cfg, {"env", "dataset"});
  const auto& d = cfg.dataset;
  const OfflineDataset ds = generate(cfg.env, d.n_traj, d.horizon, d.seed, d.max_transitions, cfg.threads);
  const auto path = in_out(cfg, kDatasetFile);
  save(ds, path);
  write_manifest(cfg, "gen-data", {}, {path});
  spdlog::info("wrote {} transitions to {} (z range [{:.4f}, {:.4f}])", ds.size(), path, ds.z_min, ds.z_max);
  return 0;
}

int cmd_train_values(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  require_sections(cfg, {"values"});
  const OfflineDataset ds = load_dataset(cfg);
  ValueTrainConfig vc = pipeline_for(cfg, ds).values;
  vc.seed = cfg.seed;
  std::vector<ValueLogEntry> log;
  const ValueBundle b = train_values(ds, vc, &log);
  const auto ckpt = in_out(cfg, kValuesFile);
  const auto log_path = in_out(cfg, "values_log.csv");
  save_values(b, ckpt);
  {
    std::ofstream out(log_path);
    out.precision(10);
    out << "step,q_hat,v_hat,reward_envelope,safety_envelope,regularizer,max_abs_v_hat\n";
    for (const auto& e : log) {
      out << e.step << ',' << e.q_hat << ',' << e.v_hat << ',' << e.reward_envelope << ','
          << e.safety_envelope << ',' << e.regularizer << ',' << e.max_abs_v_hat << '\n';
    }
  }
  write_manifest(cfg, "train-values", {in_out(cfg, kDatasetFile)}, {ckpt, log_path});
  spdlog::info("wrote {} ({} log rows)", ckpt, log.size());
  return 0;
}

int cmd_train_policy(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  require_sections(cfg, {"policy"});
  const OfflineDataset ds = load_dataset(cfg);
  const auto values_path = in_out(cfg, kValuesFile);
  require_file(values_path, "train-values");
  const ValueBundle b = load_values(values_path);
  check_value_architecture(cfg, b);
  const PipelineConfig pc = pipeline_for(cfg, ds);
  const AdvantageEvaluator adv(b, threshold_for(pc, b));
  PolicyConfig policy_cfg = pc.policy;
  policy_cfg.train.seed = cfg.seed;
  std::vector<double> log;
  const FlowPolicy p = train_policy(ds, adv, policy_cfg, &log);
  const auto ckpt = in_out(cfg, kPolicyFile);
  const auto log_path = in_out(cfg, "policy_log.csv");
  save_policy(p, ckpt);
  {
    std::ofstream out(log_path);
    out.precision(10);
    out << "interval,loss\n";
    for (std::size_t i = 0; i < log.size(); ++i) out << i << ',' << log[i] << '\n';
  }
  write_manifest(cfg, "train-policy", {in_out(cfg, kDatasetFile), values_path}, {ckpt, log_path});
  spdlog::info("wrote {}", ckpt);
  return 0;
}

int cmd_eval(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  require_sections(cfg, {"eval"});
  const auto values_path = in_out(cfg, kValuesFile);
  const auto policy_path = in_out(cfg, kPolicyFile);
  require_file(values_path, "train-values");
  require_file(policy_path, "train-policy");
  TrainedPipeline tp;
  tp.bundle = load_values(values_path);
  check_value_architecture(cfg, tp.bundle);
  tp.policy = load_policy(policy_path);
  check_policy_architecture(cfg, tp.policy);
  tp.policy.config.candidates = cfg.pipeline.policy.candidates;
  tp.policy.config.integration_steps = cfg.pipeline.policy.integration_steps;
  tp.threshold = threshold_for(cfg.pipeline, tp.bundle);
  tp.has_policy = true;
  const EvalReport rep = evaluate_pipeline(tp, cfg.env, cfg.pipeline.eval);
  const auto csv = in_out(cfg, "eval.csv");
  const auto json = in_out(cfg, "eval.json");
  write_report_csv(rep, "eval", csv);
  write_text(json, report_json(rep) + "\n");
  write_manifest(cfg, "eval", {values_path, policy_path}, {csv, json});
  const auto& a = rep.aggregate;
  std::printf("episodes=%d reward=%.3f+-%.3f safety=%.2f%% cost=%.4f sec/action=%.3g\n", a.episodes,
              a.mean_reward, a.sd_reward, a.safety_rate, a.mean_cost, a.seconds_per_action);
  return 0;
}

int cmd_ablate(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  const std::string& kind = opt.ablation;
  if (kind == "zsens") {
    const auto values_path = in_out(cfg, kValuesFile);
    require_file(values_path, "train-values");
    const ValueBundle b = load_values(values_path);
    const auto states = state_mesh(cfg.env.box, 41, 41);
    const BatchEvaluator v = [&b](const Matrix& x, const RowVector& z) { return b.v_hat_at(x, z); };
    const ZSensitivity zs = z_sensitivity_report(v, states, uniform_grid(b.z_min, b.z_max, 9));
    const auto mesh = in_out(cfg, "ablate_zsens_mesh.csv");
    const auto json = in_out(cfg, "ablate_zsens.json");
    write_mesh_csv(zs, states, mesh);
    nlohmann::json j;
    j["z"] = zs.z;
    j["mean_value"] = zs.mean_value;
    j["min_value"] = zs.min_value;
    j["max_value"] = zs.max_value;
    j["variation"] = zs.variation;
    write_text(json, j.dump(2) + "\n");
    write_manifest(cfg, "ablate_zsens", {values_path}, {mesh, json});
    std::printf("z-variation=%.6g\n", zs.variation);
    return 0;
  }
  require_sections(cfg, {"eval"});
  const OfflineDataset ds = load_dataset(cfg);
  const PipelineConfig pc = pipeline_for(cfg, ds);
  const std::vector<std::string> inputs{in_out(cfg, kDatasetFile)};
  if (kind == "tau") {
    write_sweep(cfg, "ablate_tau", value_sweep(ds, pc, "tau", {0.5, 0.6, 0.7, 0.8, 0.9}), inputs);
  } else if (kind == "lambda") {
    write_sweep(cfg, "ablate_lambda", value_sweep(ds, pc, "lambda", {0.1, 0.25, 0.5, 1.0}), inputs);
  } else if (kind == "n") {
    write_sweep(cfg, "ablate_n", candidate_sweep(ds, pc, {1, 2, 4, 8, 16, 32, 64, 128}), inputs);
  } else if (kind == "perturb") {
    write_sweep(cfg, "ablate_perturb", perturbation_table(ds, pc), inputs);
  } else {
    throw std::invalid_argument("unknown ablation '" + kind + "' (expected tau, lambda, n, perturb or zsens)");
  }
  return 0;
}

int cmd_oracle(const Options& opt) {
  const TabularMDP m = load_mdp(opt.config);
  const EquivalenceReport rep = check_equivalence(m);
  const double cell = rep.grid.spacing();
  std::printf("states=%zu actions=%zu grid=%zu spacing=%.6g sweeps=%d\n", m.states(), m.actions(),
              rep.grid.z.size(), cell, rep.grid.iterations);
  for (std::size_t s = 0; s < m.states(); ++s) {
    std::printf("state %zu: brute_force=%.6f recovered=%.6f%s\n", s, rep.brute_force[s], rep.recovered[s].value,
                rep.recovered[s].saturated ? " (grid-saturated)" : "");
  }
  std::printf("max_discrepancy=%.6g (%.3f cells) infeasibility_agrees=%s\n", rep.max_discrepancy,
              rep.max_discrepancy / cell, rep.infeasibility_agrees ? "yes" : "no");
  return rep.infeasibility_agrees && rep.max_discrepancy <= 2.0 * cell ? 0 : 3;
}

}  // namespace epiflow::cli
