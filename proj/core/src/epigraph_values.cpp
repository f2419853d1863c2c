#include "epiflow/epigraph_values.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "epiflow/binary_io.hpp"
#include "epiflow/common.hpp"

namespace epiflow {
namespace {

std::vector<int> layers(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t k) { return make_substream(seed, k)(); }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite ") + what + " loss");
}

/// Squared regression of both heads of a critic against `y`. Loss is the
/// mean over heads of each head's batch MSE.
void twin_regression(const TwinCritic& critic, const Matrix& input, const RowVector& y,
                     NetId id0, NetId id1, LossResult& out) {
  const double n = static_cast<double>(y.size());
  const NetId ids[2] = {id0, id1};
  for (int h = 0; h < 2; ++h) {
    ForwardCache cache;
    const RowVector pred = critic.heads[h].forward(input, cache);
    const RowVector diff = pred - y;
    out.value += 0.5 * diff.squaredNorm() / n;
    out.grads.emplace_back(ids[h], critic.heads[h].backward(cache, diff / n));
  }
}

/// Mean expectile loss of (target - head(input)); gradient to `head` only.
void expectile_distill(const Mlp& head, NetId id, const Matrix& input, const RowVector& target,
                       double tau, LossResult& out, RowVector* values = nullptr) {
  const double n = static_cast<double>(target.size());
  ForwardCache cache;
  const RowVector v = head.forward(input, cache);
  RowVector dv(v.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto e = expectile_loss(target[i] - v[i], tau);
    total += e.value;
    dv[i] = -e.derivative / n;
  }
  out.value += total / n;
  out.grads.emplace_back(id, head.backward(cache, dv));
  if (values) *values = v;
}

RowVector twin_min(const std::array<Mlp, 2>& heads, const Matrix& input) {
  return heads[0].forward(input).cwiseMin(heads[1].forward(input));
}

Matrix state_matrix(const State& s) {
  Matrix m(2, 1);
  m << s.x1, s.x2;
  return m;
}

}  // namespace

std::string_view net_name(NetId id) {
  switch (id) {
    case NetId::QHat0: return "q_hat.0";
    case NetId::QHat1: return "q_hat.1";
    case NetId::VHat: return "v_hat";
    case NetId::QR0: return "q_r.0";
    case NetId::QR1: return "q_r.1";
    case NetId::VR: return "v_r";
    case NetId::QS0: return "q_s.0";
    case NetId::QS1: return "q_s.1";
    case NetId::VS: return "v_s";
  }
  return "?";
}

InputScaling InputScaling::from(const StateBox& box, double z_min, double z_max) {
  InputScaling s;
  s.x1_center = 0.5 * (box.x1_min + box.x1_max);
  s.x1_half = 0.5 * (box.x1_max - box.x1_min);
  s.x2_center = 0.5 * (box.x2_min + box.x2_max);
  s.x2_half = 0.5 * (box.x2_max - box.x2_min);
  s.z_center = 0.5 * (z_min + z_max);
  s.z_half = std::max(0.5 * (z_max - z_min), 1.0);
  return s;
}

void ValueTrainConfig::validate() const {
  if (!(tau >= 0.5 && tau < 1.0)) throw std::invalid_argument("values.tau must lie in [0.5, 1)");
  if (!(lambda >= 0.0)) throw std::invalid_argument("values.lambda must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("values.gamma must lie in (0, 1)");
  if (batch_size < 1) throw std::invalid_argument("values.batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("values.steps must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("values.lr must be positive");
  if (!(ema_rate > 0.0 && ema_rate <= 1.0)) throw std::invalid_argument("values.ema_rate must lie in (0, 1]");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("values.hidden sizes must be >= 1");
}

ValueBatch ValueBatch::from(const std::vector<SampledTransition>& items) {
  const auto n = static_cast<Eigen::Index>(items.size());
  ValueBatch b;
  b.x.resize(2, n);
  b.a.resize(2, n);
  b.x_next.resize(2, n);
  b.r.resize(n);
  b.ell.resize(n);
  b.z.resize(n);
  b.z_next.resize(n);
  b.done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& it = items[static_cast<std::size_t>(i)];
    b.x.col(i) << it.t.x.x1, it.t.x.x2;
    b.a.col(i) << it.t.a.a1, it.t.a.a2;
    b.x_next.col(i) << it.t.x_next.x1, it.t.x_next.x2;
    b.r[i] = it.t.r;
    b.ell[i] = it.t.ell;
    b.z[i] = it.z;
    b.z_next[i] = it.z_next;
    b.done[i] = it.t.done ? 1.0 : 0.0;
  }
  return b;
}

ValueBundle::ValueBundle(const ValueTrainConfig& cfg, const InputScaling& sc, double zmin, double zmax)
    : scaling(sc), config(cfg), z_min(zmin), z_max(zmax) {
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  auto make_twin = [&](int in, std::uint64_t base) {
    TwinCritic t;
    for (int h = 0; h < 2; ++h) {
      t.heads[h] = Mlp(layers(in, cfg.hidden, 1), derived_seed(cfg.seed, base + h));
      t.target[h] = t.heads[h];
      t.opt[h] = OptimizerState(t.heads[h].parameter_count(), adam);
    }
    return t;
  };
  auto make_head = [&](int in, std::uint64_t k) {
    ValueHead v;
    v.net = Mlp(layers(in, cfg.hidden, 1), derived_seed(cfg.seed, k));
    v.opt = OptimizerState(v.net.parameter_count(), adam);
    return v;
  };
  q_hat = make_twin(5, 0);
  v_hat = make_head(3, 2);
  q_r = make_twin(4, 3);
  v_r = make_head(2, 5);
  q_s = make_twin(4, 6);
  v_s = make_head(2, 8);
}

Mlp& ValueBundle::network(NetId id) {
  return const_cast<Mlp&>(static_cast<const ValueBundle&>(*this).network(id));
}

const Mlp& ValueBundle::network(NetId id) const {
  switch (id) {
    case NetId::QHat0: return q_hat.heads[0];
    case NetId::QHat1: return q_hat.heads[1];
    case NetId::VHat: return v_hat.net;
    case NetId::QR0: return q_r.heads[0];
    case NetId::QR1: return q_r.heads[1];
    case NetId::VR: return v_r.net;
    case NetId::QS0: return q_s.heads[0];
    case NetId::QS1: return q_s.heads[1];
    case NetId::VS: return v_s.net;
  }
  throw std::invalid_argument("unknown network id");
}

OptimizerState& ValueBundle::optimizer(NetId id) {
  switch (id) {
    case NetId::QHat0: return q_hat.opt[0];
    case NetId::QHat1: return q_hat.opt[1];
    case NetId::VHat: return v_hat.opt;
    case NetId::QR0: return q_r.opt[0];
    case NetId::QR1: return q_r.opt[1];
    case NetId::VR: return v_r.opt;
    case NetId::QS0: return q_s.opt[0];
    case NetId::QS1: return q_s.opt[1];
    case NetId::VS: return v_s.opt;
  }
  throw std::invalid_argument("unknown network id");
}

Matrix ValueBundle::input_x(const Matrix& x) const {
  Matrix in(2, x.cols());
  in.row(0) = (x.row(0).array() - scaling.x1_center) / scaling.x1_half;
  in.row(1) = (x.row(1).array() - scaling.x2_center) / scaling.x2_half;
  return in;
}

Matrix ValueBundle::input_xz(const Matrix& x, const RowVector& z) const {
  Matrix in(3, x.cols());
  in.topRows(2) = input_x(x);
  in.row(2) = (z.array() - scaling.z_center) / scaling.z_half;
  return in;
}

Matrix ValueBundle::input_xza(const Matrix& x, const RowVector& z, const Matrix& a) const {
  Matrix in(5, x.cols());
  in.topRows(3) = input_xz(x, z);
  in.bottomRows(2) = a;
  return in;
}

Matrix ValueBundle::input_xa(const Matrix& x, const Matrix& a) const {
  Matrix in(4, x.cols());
  in.topRows(2) = input_x(x);
  in.bottomRows(2) = a;
  return in;
}

RowVector ValueBundle::v_hat_at(const Matrix& x, const RowVector& z) const {
  return v_hat.net.forward(input_xz(x, z));
}

RowVector ValueBundle::q_hat_min(const Matrix& x, const RowVector& z, const Matrix& a, bool target) const {
  return twin_min(target ? q_hat.target : q_hat.heads, input_xza(x, z, a));
}

RowVector ValueBundle::v_r_at(const Matrix& x) const { return v_r.net.forward(input_x(x)); }
RowVector ValueBundle::v_s_at(const Matrix& x) const { return v_s.net.forward(input_x(x)); }

double ValueBundle::v_hat_at(const State& s, double z) const {
  RowVector zz(1);
  zz << z;
  return v_hat_at(state_matrix(s), zz)[0];
}
double ValueBundle::v_s_at(const State& s) const { return v_s_at(state_matrix(s))[0]; }
double ValueBundle::v_r_at(const State& s) const { return v_r_at(state_matrix(s))[0]; }

bool operator==(const ValueBundle& a, const ValueBundle& b) {
  if (!(a.scaling == b.scaling && a.config == b.config && a.z_min == b.z_min && a.z_max == b.z_max))
    return false;
  for (NetId id : kAllNets)
    if (!(a.network(id) == b.network(id))) return false;
  const TwinCritic* ta[3] = {&a.q_hat, &a.q_r, &a.q_s};
  const TwinCritic* tb[3] = {&b.q_hat, &b.q_r, &b.q_s};
  for (int i = 0; i < 3; ++i)
    if (!(ta[i]->target == tb[i]->target)) return false;
  return true;
}

const Vector& LossResult::grad(NetId id) const {
  for (const auto& [k, g] : grads)
    if (k == id) return g;
  throw std::out_of_range("no gradient for network " + std::string(net_name(id)));
}

double q_hat_target(double ell_x, double v_hat_next, double gamma) {
  return std::min(ell_x, gamma * v_hat_next);
}

namespace {

bool is_terminal(const ValueBundle& b, const ValueBatch& batch, Eigen::Index i) {
  return b.config.terminal_on_done && batch.done.size() == batch.size() && batch.done[i] != 0.0;
}

}  // namespace

LossResult loss_q_hat(const ValueBundle& b, const ValueBatch& batch) {
  const double gamma = b.config.gamma;
  const RowVector v_next = b.v_hat_at(batch.x_next, batch.z_next);
  RowVector y(batch.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // At the horizon the remaining return is r(x) alone, so the budget margin is r - z.
    y[i] = is_terminal(b, batch, i) ? std::min(batch.ell[i], batch.r[i] - batch.z[i])
                                    : q_hat_target(batch.ell[i], v_next[i], gamma);
  }
  LossResult out;
  twin_regression(b.q_hat, b.input_xza(batch.x, batch.z, batch.a), y, NetId::QHat0, NetId::QHat1, out);
  check_finite(out.value, "Q-hat");
  return out;
}

LossResult loss_v_hat(const ValueBundle& b, const ValueBatch& batch, double tau) {
  const RowVector q = b.q_hat_min(batch.x, batch.z, batch.a, /*target=*/true);
  LossResult out;
  expectile_distill(b.v_hat.net, NetId::VHat, b.input_xz(batch.x, batch.z), q, tau, out);
  check_finite(out.value, "V-hat");
  return out;
}

LossResult loss_reward_envelope(const ValueBundle& b, const ValueBatch& batch, double tau) {
  const double gamma = b.config.gamma;
  RowVector y = batch.r + gamma * b.v_r_at(batch.x_next);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (is_terminal(b, batch, i)) y[i] = batch.r[i];
  const Matrix xa = b.input_xa(batch.x, batch.a);
  LossResult out;
  twin_regression(b.q_r, xa, y, NetId::QR0, NetId::QR1, out);
  expectile_distill(b.v_r.net, NetId::VR, b.input_x(batch.x), twin_min(b.q_r.target, xa), tau, out);
  check_finite(out.value, "reward envelope");
  return out;
}

LossResult loss_safety_envelope(const ValueBundle& b, const ValueBatch& batch, double tau) {
  const double gamma = b.config.gamma;
  RowVector y = batch.ell.cwiseMin(gamma * b.v_s_at(batch.x_next));
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (is_terminal(b, batch, i)) y[i] = batch.ell[i];
  const Matrix xa = b.input_xa(batch.x, batch.a);
  LossResult out;
  twin_regression(b.q_s, xa, y, NetId::QS0, NetId::QS1, out);
  expectile_distill(b.v_s.net, NetId::VS, b.input_x(batch.x), twin_min(b.q_s.target, xa), tau, out);
  check_finite(out.value, "safety envelope");
  return out;
}

LossResult loss_regularizer(const ValueBundle& b, const ValueBatch& batch) {
  const RowVector bound = (b.v_r_at(batch.x) - batch.z).cwiseMin(b.v_s_at(batch.x));
  const double n = static_cast<double>(batch.size());
  ForwardCache cache;
  const RowVector v = b.v_hat.net.forward(b.input_xz(batch.x, batch.z), cache);
  RowVector dv = RowVector::Zero(v.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double excess = v[i] - bound[i];
    if (excess > 0.0) {
      total += excess;
      dv[i] = 1.0 / n;
    }
  }
  LossResult out;
  out.value = total / n;
  out.grads.emplace_back(NetId::VHat, b.v_hat.net.backward(cache, dv));
  return out;
}

ValueBundle train_values(const OfflineDataset& ds, const ValueTrainConfig& cfg,
                         std::vector<ValueLogEntry>* log) {
  cfg.validate();
  if (ds.transitions.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  ValueBundle b(cfg, InputScaling::from(ds.meta.env.box, ds.z_min, ds.z_max), ds.z_min, ds.z_max);

  double max_ell = 0.0;
  for (const auto& t : ds.transitions) max_ell = std::max(max_ell, std::abs(t.ell));
  const double guard = 10.0 * std::max({std::abs(ds.z_min), std::abs(ds.z_max), max_ell, 1.0});

  Rng rng = make_substream(cfg.seed, 0x76616c7565ull);
  ValueLogEntry acc;
  int acc_n = 0;
  auto apply = [&](const LossResult& res) {
    for (const auto& [id, g] : res.grads) adam_step(b.optimizer(id), b.network(id), g);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const ValueBatch batch = ValueBatch::from(sample_batch(ds, cfg.batch_size, rng));

    const LossResult lq = loss_q_hat(b, batch);
    apply(lq);
    const LossResult lr = loss_reward_envelope(b, batch, cfg.tau);
    apply(lr);
    const LossResult ls = loss_safety_envelope(b, batch, cfg.tau);
    apply(ls);

    const LossResult lv = loss_v_hat(b, batch, cfg.tau);
    const LossResult lreg = loss_regularizer(b, batch);
    adam_step(b.v_hat.opt, b.v_hat.net, lv.grad(NetId::VHat) + cfg.lambda * lreg.grad(NetId::VHat));

    for (TwinCritic* t : {&b.q_hat, &b.q_r, &b.q_s})
      for (int h = 0; h < 2; ++h) ema_update(t->target[h], t->heads[h], cfg.ema_rate);

    const double max_v = b.v_hat_at(batch.x, batch.z).cwiseAbs().maxCoeff();
    if (!std::isfinite(max_v) || max_v > guard) {
      std::ostringstream msg;
      msg << "value training diverged at step " << step << ": max|V-hat| = " << max_v
          << " (limit " << guard << "), losses q_hat=" << lq.value << " v_hat=" << lv.value
          << " reward=" << lr.value << " safety=" << ls.value << " reg=" << lreg.value;
      throw TrainingDiverged(msg.str());
    }

    acc.q_hat += lq.value;
    acc.v_hat += lv.value;
    acc.reward_envelope += lr.value;
    acc.safety_envelope += ls.value;
    acc.regularizer += lreg.value;
    acc.max_abs_v_hat = std::max(acc.max_abs_v_hat, max_v);
    ++acc_n;
    if (cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      ValueLogEntry e{step + 1,
                      acc.q_hat / acc_n,
                      acc.v_hat / acc_n,
                      acc.reward_envelope / acc_n,
                      acc.safety_envelope / acc_n,
                      acc.regularizer / acc_n,
                      acc.max_abs_v_hat};
      spdlog::debug("values step {}: q_hat {:.4g} v_hat {:.4g} reward {:.4g} safety {:.4g} reg {:.4g}",
                    e.step, e.q_hat, e.v_hat, e.reward_envelope, e.safety_envelope, e.regularizer);
      if (log) log->push_back(e);
      acc = {};
      acc_n = 0;
    }
  }
  return b;
}

void save_values(const ValueBundle& b, const std::string& path) {
  std::ostringstream body;
  std::string names;
  auto emit = [&](const Mlp& net, const std::string& name) {
    names += (names.empty() ? "" : " ") + name;
    write_checkpoint(body, net, b.config.seed, 0);
  };
  for (NetId id : kAllNets) emit(b.network(id), std::string(net_name(id)));
  emit(b.q_hat.target[0], "q_hat.0.target");
  emit(b.q_hat.target[1], "q_hat.1.target");
  emit(b.q_r.target[0], "q_r.0.target");
  emit(b.q_r.target[1], "q_r.1.target");
  emit(b.q_s.target[0], "q_s.0.target");
  emit(b.q_s.target[1], "q_s.1.target");

  const auto& c = b.config;
  TextHeader h{"epiflow-values", "v1", {}};
  h.set("networks", names);
  h.set("tau", hexfloat(c.tau));
  h.set("lambda", hexfloat(c.lambda));
  h.set("gamma", hexfloat(c.gamma));
  h.set("batch_size", std::to_string(c.batch_size));
  h.set("steps", std::to_string(c.steps));
  h.set("seed", std::to_string(c.seed));
  std::string hidden;
  for (int s : c.hidden) hidden += (hidden.empty() ? "" : " ") + std::to_string(s);
  h.set("hidden", hidden);
  h.set("lr", hexfloat(c.lr));
  h.set("ema_rate", hexfloat(c.ema_rate));
  h.set("terminal_on_done", c.terminal_on_done ? "1" : "0");
  h.set("log_every", std::to_string(c.log_every));
  const auto& s = b.scaling;
  h.set("scaling", hexfloat(s.x1_center) + " " + hexfloat(s.x1_half) + " " + hexfloat(s.x2_center) +
                       " " + hexfloat(s.x2_half) + " " + hexfloat(s.z_center) + " " +
                       hexfloat(s.z_half));
  h.set("z_range", hexfloat(b.z_min) + " " + hexfloat(b.z_max));
  const std::string payload = body.str();
  h.set("checksum", "crc32:" + crc32_hex({reinterpret_cast<const unsigned char*>(payload.data()),
                                          payload.size()}));
  std::ostringstream out;
  h.write(out);
  write_file(path, out.str() + payload);
}

ValueBundle load_values(const std::string& path) {
  const std::string bytes = read_file(path);
  std::istringstream is(bytes);
  const TextHeader h = TextHeader::read(is, "epiflow-values", "v1");
  const auto offset = static_cast<std::size_t>(is.tellg());
  const std::span<const unsigned char> payload(reinterpret_cast<const unsigned char*>(bytes.data()) + offset,
                                               bytes.size() - offset);
  if ("crc32:" + crc32_hex(payload) != h.get("checksum")) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, "value checkpoint checksum mismatch");
  }
  auto nums = [&](const std::string& key) {
    std::istringstream ss(h.get(key));
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) v.push_back(parse_double(tok));
    return v;
  };
  ValueTrainConfig c;
  c.tau = parse_double(h.get("tau"));
  c.lambda = parse_double(h.get("lambda"));
  c.gamma = parse_double(h.get("gamma"));
  c.batch_size = static_cast<int>(parse_double(h.get("batch_size")));
  c.steps = static_cast<int>(parse_double(h.get("steps")));
  c.seed = std::stoull(h.get("seed"));
  c.hidden.clear();
  for (double v : nums("hidden")) c.hidden.push_back(static_cast<int>(v));
  c.lr = parse_double(h.get("lr"));
  c.ema_rate = parse_double(h.get("ema_rate"));
  c.terminal_on_done = h.get("terminal_on_done") == "1";
  c.log_every = std::stoi(h.get("log_every"));
  const auto sc = nums("scaling");
  const auto zr = nums("z_range");
  if (sc.size() != 6 || zr.size() != 2) {
    throw FormatError(FormatError::Kind::MalformedHeader, "bad scaling or z_range field");
  }
  ValueBundle b(c, InputScaling{sc[0], sc[1], sc[2], sc[3], sc[4], sc[5]}, zr[0], zr[1]);

  std::istringstream names(h.get("networks"));
  std::string name;
  while (names >> name) {
    MlpCheckpoint ck = read_checkpoint(is);
    Mlp* dst = nullptr;
    for (NetId id : kAllNets)
      if (name == net_name(id)) dst = &b.network(id);
    if (name == "q_hat.0.target") dst = &b.q_hat.target[0];
    if (name == "q_hat.1.target") dst = &b.q_hat.target[1];
    if (name == "q_r.0.target") dst = &b.q_r.target[0];
    if (name == "q_r.1.target") dst = &b.q_r.target[1];
    if (name == "q_s.0.target") dst = &b.q_s.target[0];
    if (name == "q_s.1.target") dst = &b.q_s.target[1];
    if (!dst) throw FormatError(FormatError::Kind::MalformedHeader, "unknown network '" + name + "'");
    if (ck.net.layer_sizes() != dst->layer_sizes()) {
      throw FormatError(FormatError::Kind::MalformedHeader,
                        "architecture of '" + name + "' does not match the manifest");
    }
    *dst = std::move(ck.net);
  }
  return b;
}

}  // namespace epiflow
