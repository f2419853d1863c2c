#include "epiflow/flow_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

#include "epiflow/binary_io.hpp"

namespace epiflow {
namespace {

constexpr Eigen::Index kChunk = 4096;

Matrix states_matrix(const std::vector<State>& states) {
  Matrix x(2, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) << states[i].x1, states[i].x2;
  }
  return x;
}

std::vector<int> layers(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

void project_columns(Matrix& a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double n = a.col(j).norm();
    if (n > 1.0) a.col(j) /= n;
  }
}

}  // namespace

std::pair<Vector, Vector> path_point(const Vector& a_data, const Vector& eps, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("flow time must lie in [0, 1]");
  if (a_data.size() != eps.size()) throw std::invalid_argument("action and noise sizes differ");
  return {(1.0 - t) * eps + t * a_data, a_data - eps};
}

double guidance_weight(double adv, double alpha, bool feasible, double clip_feasible,
                       double clip_infeasible) {
  const double clip = feasible ? clip_feasible : clip_infeasible;
  const double log_w = alpha * adv;
  if (std::isnan(log_w)) return clip;
  return log_w < std::log(clip) ? std::exp(log_w) : clip;
}

Matrix FlowBatch::network_input() const {
  Matrix in(a_t.rows() + cond.rows() + 1, a_t.cols());
  in.topRows(a_t.rows()) = a_t;
  if (cond.rows() > 0) in.middleRows(a_t.rows(), cond.rows()) = cond;
  in.bottomRows(1) = t;
  return in;
}

FlowLoss flow_matching_loss(const Mlp& net, const FlowBatch& batch) {
  const double n = static_cast<double>(batch.a_t.cols());
  ForwardCache cache;
  const Matrix v = net.forward(batch.network_input(), cache);
  const Matrix diff = v - batch.u;
  const RowVector sq = diff.colwise().squaredNorm();
  FlowLoss out;
  out.value = sq.cwiseProduct(batch.w).sum() / n;
  const Matrix grad_out = (2.0 / n) * (diff.array().rowwise() * batch.w.array()).matrix();
  out.grad = net.backward(cache, grad_out);
  return out;
}

void FlowTrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("policy.batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("policy.steps must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("policy.lr must be positive");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) {
    throw std::invalid_argument("policy.lr_final_fraction must lie in (0, 1]");
  }
}

std::vector<double> train_weighted_flow(Mlp& net, const WeightedFlowData& data, const FlowTrainConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = data.actions.cols();
  const Eigen::Index d = data.actions.rows();
  const Eigen::Index c = data.cond.rows();
  if (n == 0) throw std::invalid_argument("no samples to train the flow on");
  if (data.cond.cols() != n || data.weights.size() != n) {
    throw std::invalid_argument("flow data columns disagree");
  }
  if (net.input_dim() != d + c + 1 || net.output_dim() != d) {
    throw std::invalid_argument("velocity network shape does not match the data");
  }
  OptimizerState opt(net.parameter_count(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng = make_substream(cfg.seed, 0x666c6f77ull);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Eigen::Index b = cfg.batch_size;
  FlowBatch batch{Matrix(d, b), Matrix(c, b), RowVector(b), Matrix(d, b), RowVector(b)};
  std::vector<double> log;
  double acc = 0.0;
  int acc_n = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index j = 0; j < b; ++j) {
      const Eigen::Index i = pick(rng);
      const double t = unit(rng);
      for (Eigen::Index k = 0; k < d; ++k) {
        const double eps = normal(rng);
        batch.a_t(k, j) = (1.0 - t) * eps + t * data.actions(k, i);
        batch.u(k, j) = data.actions(k, i) - eps;
      }
      if (c > 0) batch.cond.col(j) = data.cond.col(i);
      batch.t[j] = t;
      batch.w[j] = data.weights[i];
    }
    const FlowLoss loss = flow_matching_loss(net, batch);
    if (!std::isfinite(loss.value)) {
      throw TrainingDiverged("flow training diverged at step " + std::to_string(step) +
                             ": non-finite loss");
    }
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    opt.cfg.lr = cfg.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * progress);
    adam_step(opt, net, loss.grad);
    acc += loss.value;
    ++acc_n;
    if (cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      log.push_back(acc / acc_n);
      spdlog::debug("flow step {}: loss {:.5g}", step + 1, acc / acc_n);
      acc = 0.0;
      acc_n = 0;
    }
  }
  return log;
}

Matrix integrate_flow(const Mlp& net, Matrix a, const Matrix& cond, int steps) {
  if (steps < 1) throw std::invalid_argument("integration steps must be >= 1");
  const double h = 1.0 / steps;
  FlowBatch frame{a, cond, RowVector(a.cols()), Matrix(), RowVector()};
  for (int k = 0; k < steps; ++k) {
    frame.a_t = a;
    frame.t.setConstant(k * h);
    a += h * net.forward(frame.network_input());
    if (!a.allFinite()) throw std::domain_error("non-finite action during flow integration");
  }
  return a;
}

void PolicyConfig::validate() const {
  if (integration_steps < 1) throw std::invalid_argument("policy.integration_steps must be >= 1");
  if (candidates < 1) throw std::invalid_argument("policy.candidates must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("policy.alpha must be positive");
  if (!(clip_feasible > 1.0 && clip_infeasible > 1.0)) {
    throw std::invalid_argument("policy weight clips must exceed 1");
  }
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("policy.hidden sizes must be >= 1");
  train.validate();
}

Matrix FlowPolicy::condition(const Matrix& x, const RowVector& z) const {
  Matrix c(cond_dim(), x.cols());
  c.row(0) = (x.row(0).array() - scaling.x1_center) / scaling.x1_half;
  c.row(1) = (x.row(1).array() - scaling.x2_center) / scaling.x2_half;
  if (config.condition_on_z) c.row(2) = (z.array() - scaling.z_center) / scaling.z_half;
  return c;
}

AdvantageEvaluator::AdvantageEvaluator(const ValueBundle& bundle, ThresholdConfig cfg)
    : bundle_(&bundle), cfg_(cfg) {
  cfg_.validate();
}

std::vector<ThresholdResult> AdvantageEvaluator::z_star(const std::vector<State>& states) const {
  const ValueBundle& b = *bundle_;
  return z_star_batch([&b](const Matrix& x, const RowVector& z) { return b.v_hat_at(x, z); }, states,
                      cfg_);
}

RowVector AdvantageEvaluator::advantage(const Matrix& x, const RowVector& z, const Matrix& a) const {
  return bundle_->q_hat_min(x, z, a) - bundle_->v_hat_at(x, z);
}

WeightedFlowData guidance_data(const OfflineDataset& ds, const AdvantageEvaluator& adv,
                               const PolicyConfig& cfg, const InputScaling& scaling) {
  const auto n = static_cast<Eigen::Index>(ds.transitions.size());
  FlowPolicy shape{Mlp(), cfg, scaling};
  WeightedFlowData out{Matrix(2, n), Matrix(shape.cond_dim(), n), RowVector(n)};
  int infeasible = 0;
  double feasible_states = 0.0;
  for (Eigen::Index lo = 0; lo < n; lo += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - lo);
    std::vector<State> states(static_cast<std::size_t>(m));
    Matrix a(2, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto& t = ds.transitions[static_cast<std::size_t>(lo + j)];
      states[static_cast<std::size_t>(j)] = t.x;
      a.col(j) << t.a.a1, t.a.a2;
    }
    const Matrix x = states_matrix(states);
    const auto zs = adv.z_star(states);
    RowVector z(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      z[j] = zs[static_cast<std::size_t>(j)].z;
      if (zs[static_cast<std::size_t>(j)].status == ThresholdStatus::Infeasible) ++infeasible;
    }
    const RowVector A = adv.advantage(x, z, a);
    const RowVector vs = adv.bundle().v_s_at(x);
    for (Eigen::Index j = 0; j < m; ++j) {
      const bool feasible = vs[j] >= 0.0;
      feasible_states += feasible ? 1.0 : 0.0;
      out.weights[lo + j] = guidance_weight(A[j], cfg.alpha, feasible, cfg.clip_feasible, cfg.clip_infeasible);
    }
    out.actions.middleCols(lo, m) = a;
    out.cond.middleCols(lo, m) = shape.condition(x, z);
  }
  spdlog::info("guidance weights: {} states, {} infeasible thresholds, {:.1f}% V_s-feasible, mean w {:.4g}",
               n, infeasible, n > 0 ? 100.0 * feasible_states / static_cast<double>(n) : 0.0,
               n > 0 ? out.weights.mean() : 0.0);
  return out;
}

FlowPolicy train_policy(const OfflineDataset& ds, const AdvantageEvaluator& adv, const PolicyConfig& cfg,
                        std::vector<double>* loss_log) {
  cfg.validate();
  if (ds.transitions.empty()) throw std::invalid_argument("cannot train a policy on an empty dataset");
  FlowPolicy p;
  p.config = cfg;
  p.scaling = adv.bundle().scaling;
  p.net = Mlp(layers(2 + p.cond_dim() + 1, cfg.hidden, 2), make_substream(cfg.train.seed, 0x7669ull)());
  const WeightedFlowData data = guidance_data(ds, adv, cfg, p.scaling);
  auto log = train_weighted_flow(p.net, data, cfg.train);
  if (loss_log) *loss_log = std::move(log);
  return p;
}

std::vector<Action> sample_actions(const FlowPolicy& p, const AdvantageEvaluator& adv,
                                   const std::vector<State>& states, std::vector<Rng*> rngs) {
  if (rngs.size() != states.size()) throw std::invalid_argument("one generator per state is required");
  const auto b = static_cast<Eigen::Index>(states.size());
  const Eigen::Index n = p.config.candidates;
  std::vector<Action> out(states.size());
  if (b == 0) return out;
  const Matrix x = states_matrix(states);
  const bool need_z = n > 1 || p.config.condition_on_z;
  RowVector z = RowVector::Zero(b);
  if (need_z) {
    const auto zs = adv.z_star(states);
    for (Eigen::Index i = 0; i < b; ++i) z[i] = zs[static_cast<std::size_t>(i)].z;
  }

  Matrix xr(2, b * n);
  RowVector zr(b * n);
  Matrix a0(2, b * n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < b; ++i) {
    Rng& rng = *rngs[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::Index j = i * n + c;
      xr.col(j) = x.col(i);
      zr[j] = z[i];
      a0(0, j) = normal(rng);
      a0(1, j) = normal(rng);
    }
  }
  Matrix a = integrate_flow(p.net, std::move(a0), p.condition(xr, zr), p.config.integration_steps);
  project_columns(a);

  RowVector score = RowVector::Zero(b * n);
  if (n > 1) score = adv.bundle().q_hat_min(xr, zr, a);
  for (Eigen::Index i = 0; i < b; ++i) {
    Eigen::Index best = 0;
    score.segment(i * n, n).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = project_to_disc({a(0, i * n + best), a(1, i * n + best)});
  }
  return out;
}

Action sample_action(const FlowPolicy& p, const AdvantageEvaluator& adv, const State& x, Rng& rng) {
  return sample_actions(p, adv, {x}, {&rng}).front();
}

std::vector<double> tilted_distribution(const std::vector<double>& pi_beta, const std::vector<double>& adv,
                                        double alpha) {
  if (pi_beta.size() != adv.size() || pi_beta.empty()) {
    throw std::invalid_argument("behaviour probabilities and advantages must be non-empty and aligned");
  }
  std::vector<double> logit(pi_beta.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < pi_beta.size(); ++i)
    if (pi_beta[i] > 0.0) logit[i] = std::log(pi_beta[i]) + alpha * adv[i];
  const double top = *std::max_element(logit.begin(), logit.end());
  std::vector<double> out(pi_beta.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) total += out[i] = std::exp(logit[i] - top);
  for (double& v : out) v /= total;
  return out;
}

double regularized_objective(const std::vector<double>& pi, const std::vector<double>& pi_beta,
                             const std::vector<double>& adv, double alpha) {
  double gain = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    gain += pi[i] * adv[i];
    if (pi[i] > 0.0) kl += pi[i] * std::log(pi[i] / pi_beta[i]);
  }
  return gain - kl / alpha;
}

void save_policy(const FlowPolicy& p, const std::string& path) {
  std::ostringstream body;
  write_checkpoint(body, p.net, p.config.train.seed, static_cast<std::uint64_t>(p.config.train.steps));
  const std::string payload = body.str();
  const auto& c = p.config;
  TextHeader h{"epiflow-policy", "v1", {}};
  h.set("integration_steps", std::to_string(c.integration_steps));
  h.set("candidates", std::to_string(c.candidates));
  h.set("alpha", hexfloat(c.alpha));
  h.set("clip_feasible", hexfloat(c.clip_feasible));
  h.set("clip_infeasible", hexfloat(c.clip_infeasible));
  h.set("condition_on_z", c.condition_on_z ? "1" : "0");
  std::string hidden;
  for (int s : c.hidden) hidden += (hidden.empty() ? "" : " ") + std::to_string(s);
  h.set("hidden", hidden);
  h.set("batch_size", std::to_string(c.train.batch_size));
  h.set("steps", std::to_string(c.train.steps));
  h.set("lr", hexfloat(c.train.lr));
  h.set("lr_final_fraction", hexfloat(c.train.lr_final_fraction));
  h.set("seed", std::to_string(c.train.seed));
  h.set("log_every", std::to_string(c.train.log_every));
  const auto& s = p.scaling;
  h.set("scaling", hexfloat(s.x1_center) + " " + hexfloat(s.x1_half) + " " + hexfloat(s.x2_center) +
                       " " + hexfloat(s.x2_half) + " " + hexfloat(s.z_center) + " " +
                       hexfloat(s.z_half));
  h.set("checksum", "crc32:" + crc32_hex({reinterpret_cast<const unsigned char*>(payload.data()),
                                          payload.size()}));
  std::ostringstream out;
  h.write(out);
  write_file(path, out.str() + payload);
}

FlowPolicy load_policy(const std::string& path) {
  const std::string bytes = read_file(path);
  std::istringstream is(bytes);
  const TextHeader h = TextHeader::read(is, "epiflow-policy", "v1");
  const auto offset = static_cast<std::size_t>(is.tellg());
  const std::span<const unsigned char> payload(reinterpret_cast<const unsigned char*>(bytes.data()) + offset,
                                               bytes.size() - offset);
  if ("crc32:" + crc32_hex(payload) != h.get("checksum")) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, "policy checkpoint checksum mismatch");
  }
  FlowPolicy p;
  auto& c = p.config;
  try {
    c.integration_steps = std::stoi(h.get("integration_steps"));
    c.candidates = std::stoi(h.get("candidates"));
    c.condition_on_z = h.get("condition_on_z") == "1";
    c.train.batch_size = std::stoi(h.get("batch_size"));
    c.train.steps = std::stoi(h.get("steps"));
    c.train.seed = std::stoull(h.get("seed"));
    c.train.log_every = std::stoi(h.get("log_every"));
  } catch (const std::logic_error&) {
    throw FormatError(FormatError::Kind::MalformedHeader, "bad integer field in policy manifest");
  }
  c.alpha = parse_double(h.get("alpha"));
  c.clip_feasible = parse_double(h.get("clip_feasible"));
  c.clip_infeasible = parse_double(h.get("clip_infeasible"));
  c.train.lr = parse_double(h.get("lr"));
  c.train.lr_final_fraction = parse_double(h.get("lr_final_fraction"));
  c.hidden.clear();
  {
    std::istringstream ss(h.get("hidden"));
    int v = 0;
    while (ss >> v) c.hidden.push_back(v);
  }
  std::vector<double> sc;
  {
    std::istringstream ss(h.get("scaling"));
    std::string tok;
    while (ss >> tok) sc.push_back(parse_double(tok));
  }
  if (sc.size() != 6) throw FormatError(FormatError::Kind::MalformedHeader, "bad scaling field");
  p.scaling = {sc[0], sc[1], sc[2], sc[3], sc[4], sc[5]};
  MlpCheckpoint ck = read_checkpoint(is);
  if (ck.net.layer_sizes() != layers(2 + p.cond_dim() + 1, c.hidden, 2)) {
    throw FormatError(FormatError::Kind::MalformedHeader,
                      "velocity network architecture does not match the manifest");
  }
  p.net = std::move(ck.net);
  return p;
}

}  // namespace epiflow
