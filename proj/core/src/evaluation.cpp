#include "epiflow/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "epiflow/binary_io.hpp"

namespace epiflow {
namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write '" + path + "'");
  out.precision(10);
  return out;
}

nlohmann::json to_json(const SeedReport& r) {
  return {{"seed", r.seed},
          {"episodes", r.episodes},
          {"mean_reward", r.mean_reward},
          {"sd_reward", r.sd_reward},
          {"safety_rate", r.safety_rate},
          {"mean_cost", r.mean_cost},
          {"seconds_per_action", r.seconds_per_action}};
}

EvalConfig single_seed(const EvalConfig& cfg, std::uint64_t seed) {
  EvalConfig out = cfg;
  out.seeds = {seed};
  return out;
}

}  // namespace

std::vector<Action> FunctionController::act(const std::vector<State>& states, std::vector<Rng*>) const {
  std::vector<Action> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(f_(s));
  return out;
}

std::vector<Action> FlowController::act(const std::vector<State>& states, std::vector<Rng*> rngs) const {
  return sample_actions(*policy_, *adv_, states, std::move(rngs));
}

void EvalConfig::validate() const {
  if (n_episodes < 1) throw std::invalid_argument("eval.n_episodes must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("eval.seeds must not be empty");
  if (horizon < 1) throw std::invalid_argument("eval.horizon must be >= 1");
  if (!(perturbation >= 0.0 && perturbation < 1.0)) {
    throw std::invalid_argument("perturbation fraction must lie in [0, 1)");
  }
  for (double p : perturbation_levels) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("perturbation levels must lie in [0, 1)");
  }
  if (max_initial_tries < 1) throw std::invalid_argument("eval.max_initial_tries must be >= 1");
}

State sample_initial_state(const EnvConfig& env, Rng& rng, int max_tries) {
  std::uniform_real_distribution<double> u1(env.box.x1_min, env.box.x1_max);
  std::uniform_real_distribution<double> u2(env.box.x2_min, env.box.x2_max);
  for (int i = 0; i < max_tries; ++i) {
    const State s{u1(rng), u2(rng)};
    if (safety(s, env) >= 0.0) return s;
  }
  throw std::runtime_error("no safe initial state found in " + std::to_string(max_tries) + " draws");
}

std::vector<EpisodeStats> run_episodes(const Controller& c, const EnvConfig& env, const EvalConfig& cfg,
                                       std::uint64_t seed, double* seconds_per_action) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_episodes);
  const int threads = std::min<int>(resolve_threads(cfg.threads), cfg.n_episodes);
  const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
  std::vector<EpisodeStats> out(n);
  std::vector<double> busy(static_cast<std::size_t>(threads), 0.0);
  const double sigma = cfg.perturbation;  // action bound is 1

  parallel_for(static_cast<std::size_t>(threads), threads, [&](std::size_t w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) return;
    std::vector<Rng> rngs;
    std::vector<Rng*> ptrs;
    std::vector<State> states;
    for (std::size_t i = lo; i < hi; ++i) rngs.push_back(make_substream(seed, i));
    for (auto& r : rngs) ptrs.push_back(&r);
    for (std::size_t i = lo; i < hi; ++i) {
      const State s = cfg.initial_states.empty()
                          ? sample_initial_state(env, rngs[i - lo], cfg.max_initial_tries)
                          : cfg.initial_states[i % cfg.initial_states.size()];
      states.push_back(s);
      out[i].initial = s;
    }
    std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
    for (int t = 0; t < cfg.horizon; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Action> actions = c.act(states, ptrs);
      busy[w] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (actions.size() != states.size()) throw std::logic_error("controller returned the wrong batch size");
      for (std::size_t k = 0; k < states.size(); ++k) {
        Action a = actions[k];
        if (sigma > 0.0) {
          a.a1 += noise(rngs[k]);
          a.a2 += noise(rngs[k]);
          a = project_to_disc(a);
        }
        const StepResult res = step(states[k], a, env, t);
        auto& ep = out[lo + k];
        ep.reward += res.reward;
        if (res.ell < 0.0) ++ep.cost;
        states[k] = res.next;
      }
    }
  });
  if (seconds_per_action) {
    *seconds_per_action = std::accumulate(busy.begin(), busy.end(), 0.0) /
                          (static_cast<double>(n) * cfg.horizon);
  }
  return out;
}

SeedReport summarize(std::uint64_t seed, const std::vector<EpisodeStats>& episodes, double seconds_per_action) {
  SeedReport r;
  r.seed = seed;
  r.episodes = static_cast<int>(episodes.size());
  r.seconds_per_action = seconds_per_action;
  if (episodes.empty()) return r;
  const double n = static_cast<double>(episodes.size());
  int safe = 0;
  for (const auto& e : episodes) {
    r.mean_reward += e.reward / n;
    r.mean_cost += e.cost / n;
    if (e.cost == 0) ++safe;
  }
  double ss = 0.0;
  for (const auto& e : episodes) ss += (e.reward - r.mean_reward) * (e.reward - r.mean_reward);
  r.sd_reward = episodes.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  r.safety_rate = 100.0 * safe / n;
  return r;
}

EvalReport rollout(const Controller& c, const EnvConfig& env, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport rep;
  std::vector<EpisodeStats> pooled;
  double time_sum = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    double spa = 0.0;
    auto eps = run_episodes(c, env, cfg, seed, &spa);
    rep.per_seed.push_back(summarize(seed, eps, spa));
    pooled.insert(pooled.end(), eps.begin(), eps.end());
    time_sum += spa;
  }
  rep.aggregate = summarize(cfg.seeds.front(), pooled, time_sum / static_cast<double>(cfg.seeds.size()));
  return rep;
}

std::vector<EvalReport> perturbation_sweep(const Controller& c, const EnvConfig& env, const EvalConfig& cfg) {
  std::vector<EvalReport> out;
  for (double level : cfg.perturbation_levels) {
    EvalConfig e = cfg;
    e.perturbation = level;
    out.push_back(rollout(c, env, e));
  }
  return out;
}

ThresholdConfig threshold_for(const PipelineConfig& cfg, const ValueBundle& bundle) {
  ThresholdConfig t = cfg.threshold;
  if (cfg.threshold_from_dataset) {
    t.z_lo = bundle.z_min;
    t.z_hi = bundle.z_max > bundle.z_min ? bundle.z_max : bundle.z_min + 1.0;
  }
  return t;
}

TrainedPipeline train_pipeline(const OfflineDataset& ds, const PipelineConfig& cfg, std::uint64_t seed,
                               bool with_policy) {
  TrainedPipeline tp;
  ValueTrainConfig vc = cfg.values;
  vc.seed = seed;
  tp.bundle = train_values(ds, vc);
  tp.threshold = threshold_for(cfg, tp.bundle);
  if (with_policy) {
    PolicyConfig pc = cfg.policy;
    pc.train.seed = seed;
    const AdvantageEvaluator adv(tp.bundle, tp.threshold);
    tp.policy = train_policy(ds, adv, pc);
    tp.has_policy = true;
  }
  return tp;
}

EvalReport evaluate_pipeline(const TrainedPipeline& tp, const EnvConfig& env, const EvalConfig& cfg) {
  if (!tp.has_policy) throw std::logic_error("pipeline was trained without a policy");
  const AdvantageEvaluator adv(tp.bundle, tp.threshold);
  const FlowController ctl(tp.policy, adv);
  return rollout(ctl, env, cfg);
}

double z_variation(const ValueBundle& bundle, const StateBox& box) {
  const auto states = state_mesh(box, 41, 41);
  const BatchEvaluator v = [&bundle](const Matrix& x, const RowVector& z) { return bundle.v_hat_at(x, z); };
  return z_sensitivity_report(v, states, {bundle.z_min, bundle.z_max}).variation;
}

std::vector<SweepRow> value_sweep(const OfflineDataset& ds, const PipelineConfig& base,
                                  const std::string& parameter, const std::vector<double>& grid) {
  if (parameter != "tau" && parameter != "lambda") {
    throw std::invalid_argument("value sweep parameter must be 'tau' or 'lambda'");
  }
  std::vector<SweepRow> rows;
  for (double v : grid) {
    for (std::uint64_t seed : base.eval.seeds) {
      SweepRow row{parameter, v, seed, {}, 0.0, 0.0, {}};
      try {
        PipelineConfig cfg = base;
        (parameter == "tau" ? cfg.values.tau : cfg.values.lambda) = v;
        const TrainedPipeline tp = train_pipeline(ds, cfg, seed);
        row.report = evaluate_pipeline(tp, ds.meta.env, single_seed(cfg.eval, seed)).aggregate;
        row.z_variation = z_variation(tp.bundle, ds.meta.env.box);
      } catch (const std::exception& e) {
        row.error = e.what();
        spdlog::warn("{} = {} seed {} failed: {}", parameter, v, seed, e.what());
      }
      spdlog::info("{} = {} seed {}: reward {:.2f} safety {:.1f}% cost {:.3f}", parameter, v, seed,
                   row.report.mean_reward, row.report.safety_rate, row.report.mean_cost);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<SweepRow> candidate_sweep(const OfflineDataset& ds, const PipelineConfig& base,
                                      const std::vector<int>& grid) {
  std::vector<SweepRow> rows;
  for (std::uint64_t seed : base.eval.seeds) {
    TrainedPipeline tp;
    std::string error;
    try {
      tp = train_pipeline(ds, base, seed);
    } catch (const std::exception& e) {
      error = e.what();
    }
    for (int n : grid) {
      SweepRow row{"candidates", static_cast<double>(n), seed, {}, 0.0, 0.0, error};
      if (error.empty()) {
        try {
          TrainedPipeline variant = tp;
          variant.policy.config.candidates = n;
          row.report = evaluate_pipeline(variant, ds.meta.env, single_seed(base.eval, seed)).aggregate;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<SweepRow> perturbation_table(const OfflineDataset& ds, const PipelineConfig& base) {
  std::vector<SweepRow> rows;
  std::vector<double> levels{0.0};
  for (double l : base.eval.perturbation_levels)
    if (l > 0.0) levels.push_back(l);
  for (std::uint64_t seed : base.eval.seeds) {
    TrainedPipeline tp;
    std::string error;
    try {
      tp = train_pipeline(ds, base, seed);
    } catch (const std::exception& e) {
      error = e.what();
    }
    double reference = 0.0;
    for (double level : levels) {
      SweepRow row{"perturbation", level, seed, {}, 0.0, 0.0, error};
      if (error.empty()) {
        try {
          EvalConfig e = single_seed(base.eval, seed);
          e.perturbation = level;
          row.report = evaluate_pipeline(tp, ds.meta.env, e).aggregate;
          if (level == 0.0) reference = row.report.mean_reward;
          // Rewards are negative distances, so the unperturbed / perturbed
          // ratio is the share of the clean performance retained.
          row.relative_reward = row.report.mean_reward != 0.0 ? 100.0 * reference / row.report.mean_reward
                                                              : 100.0;
        } catch (const std::exception& ex) {
          row.error = ex.what();
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<State> state_mesh(const StateBox& box, int nx, int ny) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("mesh needs at least 2 points per axis");
  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      out.push_back({box.x1_min + (box.x1_max - box.x1_min) * i / (nx - 1),
                     box.x2_min + (box.x2_max - box.x2_min) * j / (ny - 1)});
  return out;
}

std::vector<double> uniform_grid(double lo, double hi, int n) {
  if (n < 2) return {lo};
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (n - 1);
  return out;
}

ZSensitivity z_sensitivity_report(const BatchEvaluator& vhat, const std::vector<State>& states,
                                  const std::vector<double>& z_grid) {
  if (z_grid.empty()) throw std::invalid_argument("z grid must not be empty");
  ZSensitivity out;
  out.z = z_grid;
  const auto n = static_cast<Eigen::Index>(states.size());
  const auto nz = static_cast<Eigen::Index>(z_grid.size());
  out.mesh.resize(n, nz);
  Matrix x(2, n);
  for (Eigen::Index i = 0; i < n; ++i) x.col(i) << states[static_cast<std::size_t>(i)].x1,
                                           states[static_cast<std::size_t>(i)].x2;
  for (Eigen::Index k = 0; k < nz; ++k) {
    out.mesh.col(k) = vhat(x, RowVector::Constant(n, z_grid[static_cast<std::size_t>(k)])).transpose();
    out.mean_value.push_back(n > 0 ? out.mesh.col(k).mean() : 0.0);
    out.min_value.push_back(n > 0 ? out.mesh.col(k).minCoeff() : 0.0);
    out.max_value.push_back(n > 0 ? out.mesh.col(k).maxCoeff() : 0.0);
  }
  out.variation = n > 0 ? (out.mesh.col(0) - out.mesh.col(nz - 1)).mean() : 0.0;
  return out;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  auto out = open_out(path);
  out << "parameter,value,seed,episodes,mean_reward,sd_reward,safety_rate,mean_cost,seconds_per_action,"
         "z_variation,relative_reward,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.parameter << ',' << r.value << ',' << r.seed << ',' << r.report.episodes << ','
        << r.report.mean_reward << ',' << r.report.sd_reward << ',' << r.report.safety_rate << ','
        << r.report.mean_cost << ',' << r.report.seconds_per_action << ',' << r.z_variation << ','
        << r.relative_reward << ',' << err << '\n';
  }
}

void write_report_csv(const EvalReport& report, const std::string& label, const std::string& path) {
  auto out = open_out(path);
  out << "label,seed,episodes,mean_reward,sd_reward,safety_rate,mean_cost,seconds_per_action\n";
  for (const auto& r : report.per_seed) {
    out << label << ',' << r.seed << ',' << r.episodes << ',' << r.mean_reward << ',' << r.sd_reward << ','
        << r.safety_rate << ',' << r.mean_cost << ',' << r.seconds_per_action << '\n';
  }
}

void write_mesh_csv(const ZSensitivity& z, const std::vector<State>& states, const std::string& path) {
  auto out = open_out(path);
  out << "x1,x2";
  for (double v : z.z) out << ",z=" << v;
  out << '\n';
  for (std::size_t i = 0; i < states.size(); ++i) {
    out << states[i].x1 << ',' << states[i].x2;
    for (Eigen::Index k = 0; k < z.mesh.cols(); ++k) out << ',' << z.mesh(static_cast<Eigen::Index>(i), k);
    out << '\n';
  }
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["aggregate"] = to_json(report.aggregate);
  j["per_seed"] = nlohmann::json::array();
  for (const auto& r : report.per_seed) j["per_seed"].push_back(to_json(r));
  return j.dump(2);
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = to_json(r.report);
    row["parameter"] = r.parameter;
    row["value"] = r.value;
    row["seed"] = r.seed;
    row["z_variation"] = r.z_variation;
    row["relative_reward"] = r.relative_reward;
    if (!r.error.empty()) row["error"] = r.error;
    j.push_back(row);
  }
  return j.dump(2);
}

}  // namespace epiflow
