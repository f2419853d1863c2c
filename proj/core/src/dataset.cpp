#include "epiflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "epiflow/binary_io.hpp"

namespace epiflow {
namespace {

constexpr const char* kMagic = "epiflow-dataset";
constexpr const char* kVersion = "v1";
constexpr const char* kFields = "x1 x2 a1 a2 r ell x1_next x2_next done";
constexpr std::size_t kColumns = 9;

struct TrajectoryResult {
  std::vector<Transition> steps;
  double min_return = std::numeric_limits<double>::infinity();
  double max_return = -std::numeric_limits<double>::infinity();
};

TrajectoryResult simulate_trajectory(const EnvConfig& cfg, int horizon, Rng rng) {
  std::uniform_real_distribution<double> u1(cfg.box.x1_min, cfg.box.x1_max);
  std::uniform_real_distribution<double> u2(cfg.box.x2_min, cfg.box.x2_max);
  TrajectoryResult out;
  out.steps.reserve(static_cast<std::size_t>(horizon));
  State x{u1(rng), u2(rng)};
  for (int t = 0; t < horizon; ++t) {
    const Action a = sample_disc_action(rng);
    const StepResult res = step(x, a, cfg, t);
    out.steps.push_back({x, a, res.reward, res.ell, res.next, t + 1 == horizon});
    x = res.next;
  }
  double g = 0.0;
  for (auto it = out.steps.rbegin(); it != out.steps.rend(); ++it) {
    g = it->r + cfg.gamma * g;
    out.min_return = std::min(out.min_return, g);
    out.max_return = std::max(out.max_return, g);
  }
  return out;
}

void put_env(TextHeader& h, const EnvConfig& env) {
  h.set("env.dt", hexfloat(env.dt));
  h.set("env.gamma", hexfloat(env.gamma));
  h.set("env.goal", hexfloat(env.goal.x1) + " " + hexfloat(env.goal.x2));
  h.set("env.reward_scale", hexfloat(env.reward_scale));
  h.set("env.episode_length", std::to_string(env.episode_length));
  h.set("env.box", hexfloat(env.box.x1_min) + " " + hexfloat(env.box.x1_max) + " " +
                       hexfloat(env.box.x2_min) + " " + hexfloat(env.box.x2_max));
  std::string obs = std::to_string(env.obstacles.size());
  for (const auto& o : env.obstacles) {
    obs += " " + hexfloat(o.center.x1) + " " + hexfloat(o.center.x2) + " " + hexfloat(o.radius);
  }
  h.set("env.obstacles", obs);
}

std::vector<double> split_doubles(const std::string& text) {
  std::istringstream ss(text);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) out.push_back(parse_double(tok));
  return out;
}

EnvConfig get_env(const TextHeader& h) {
  EnvConfig env;
  env.dt = parse_double(h.get("env.dt"));
  env.gamma = parse_double(h.get("env.gamma"));
  auto goal = split_doubles(h.get("env.goal"));
  auto box = split_doubles(h.get("env.box"));
  auto obs = split_doubles(h.get("env.obstacles"));
  if (goal.size() != 2 || box.size() != 4 || obs.empty() ||
      obs.size() != 1 + 3 * static_cast<std::size_t>(obs[0])) {
    throw FormatError(FormatError::Kind::MalformedHeader, "malformed env echo in header");
  }
  env.goal = {goal[0], goal[1]};
  env.box = {box[0], box[1], box[2], box[3]};
  env.reward_scale = parse_double(h.get("env.reward_scale"));
  env.episode_length = static_cast<int>(parse_double(h.get("env.episode_length")));
  env.obstacles.clear();
  for (std::size_t i = 0; i < static_cast<std::size_t>(obs[0]); ++i) {
    env.obstacles.push_back({{obs[1 + 3 * i], obs[2 + 3 * i]}, obs[3 + 3 * i]});
  }
  return env;
}

std::uint64_t parse_u64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::MalformedHeader, "not an integer: '" + s + "'");
  }
}

}  // namespace

Action sample_disc_action(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  const double radius = std::sqrt(unit(rng));
  Action a{radius * std::cos(angle), radius * std::sin(angle)};
  // cos^2 + sin^2 can round above one; keep the bound exact.
  return project_to_disc(a);
}

OfflineDataset generate(const EnvConfig& cfg, int n_traj, int horizon, std::uint64_t seed,
                        std::size_t max_transitions, int threads) {
  cfg.validate();
  if (n_traj < 1 || horizon < 1) throw std::invalid_argument("n_traj and horizon must be >= 1");
  const auto total = static_cast<std::size_t>(n_traj) * static_cast<std::size_t>(horizon);
  if (total > max_transitions) {
    throw std::length_error("dataset of " + std::to_string(total) +
                            " transitions exceeds the cap of " + std::to_string(max_transitions));
  }

  std::vector<TrajectoryResult> trajs(static_cast<std::size_t>(n_traj));
  parallel_for(trajs.size(), threads, [&](std::size_t i) {
    trajs[i] = simulate_trajectory(cfg, horizon, make_substream(seed, i));
  });

  OfflineDataset ds;
  ds.meta = {cfg, n_traj, horizon, seed};
  ds.transitions.reserve(total);
  ds.z_min = std::numeric_limits<double>::infinity();
  ds.z_max = -std::numeric_limits<double>::infinity();
  for (auto& tr : trajs) {
    ds.transitions.insert(ds.transitions.end(), tr.steps.begin(), tr.steps.end());
    ds.z_min = std::min(ds.z_min, tr.min_return);
    ds.z_max = std::max(ds.z_max, tr.max_return);
  }
  return ds;
}

std::vector<SampledTransition> sample_batch(const OfflineDataset& ds, int batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (ds.transitions.empty()) throw std::invalid_argument("cannot sample from an empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, ds.transitions.size() - 1);
  std::uniform_real_distribution<double> zdist(ds.z_min, ds.z_max);
  const double gamma = ds.meta.env.gamma;
  std::vector<SampledTransition> out(static_cast<std::size_t>(batch));
  for (auto& item : out) {
    item.t = ds.transitions[pick(rng)];
    item.z = ds.z_min == ds.z_max ? ds.z_min : zdist(rng);
    item.z_next = next_budget(item.z, item.t.r, gamma);
  }
  return out;
}

AuditResult audit(const OfflineDataset& ds) {
  AuditResult res;
  for (const auto& t : ds.transitions) {
    const State expect = integrate_dynamics(t.x, t.a, ds.meta.env);
    res.max_reward_error = std::max(res.max_reward_error, std::abs(t.r - reward(t.x, ds.meta.env)));
    res.max_safety_error = std::max(res.max_safety_error, std::abs(t.ell - safety(t.x, ds.meta.env)));
    res.max_next_state_error =
        std::max({res.max_next_state_error, std::abs(expect.x1 - t.x_next.x1),
                  std::abs(expect.x2 - t.x_next.x2)});
  }
  return res;
}

std::string serialize(const OfflineDataset& ds) {
  std::vector<unsigned char> block;
  block.reserve(ds.transitions.size() * kColumns * 8);
  for (const auto& t : ds.transitions) {
    for (double v : {t.x.x1, t.x.x2, t.a.a1, t.a.a2, t.r, t.ell, t.x_next.x1, t.x_next.x2,
                     t.done ? 1.0 : 0.0}) {
      append_f64_le(block, v);
    }
  }
  TextHeader h{kMagic, kVersion, {}};
  h.set("fields", kFields);
  h.set("rows", std::to_string(ds.transitions.size()));
  h.set("n_traj", std::to_string(ds.meta.n_traj));
  h.set("horizon", std::to_string(ds.meta.horizon));
  h.set("seed", std::to_string(ds.meta.seed));
  put_env(h, ds.meta.env);
  h.set("z_min", hexfloat(ds.z_min));
  h.set("z_max", hexfloat(ds.z_max));
  h.set("checksum", "crc32:" + crc32_hex(block));
  std::ostringstream os;
  h.write(os);
  std::string out = os.str();
  out.append(reinterpret_cast<const char*>(block.data()), block.size());
  return out;
}

OfflineDataset deserialize(const std::string& bytes) {
  std::istringstream is(bytes);
  const TextHeader h = TextHeader::read(is, kMagic, kVersion);
  if (h.get("fields") != kFields) {
    throw FormatError(FormatError::Kind::MalformedHeader, "unexpected field list");
  }
  const std::uint64_t rows = parse_u64(h.get("rows"));
  if (rows == 0) throw FormatError(FormatError::Kind::EmptyDataset, "empty dataset");

  OfflineDataset ds;
  ds.meta.env = get_env(h);
  ds.meta.n_traj = static_cast<int>(parse_u64(h.get("n_traj")));
  ds.meta.horizon = static_cast<int>(parse_u64(h.get("horizon")));
  ds.meta.seed = parse_u64(h.get("seed"));
  ds.z_min = parse_double(h.get("z_min"));
  ds.z_max = parse_double(h.get("z_max"));
  const std::string& checksum = h.get("checksum");

  const auto offset = static_cast<std::size_t>(is.tellg());
  const std::size_t expected = rows * kColumns * 8;
  const std::size_t available = bytes.size() - offset;
  std::span<const unsigned char> block(reinterpret_cast<const unsigned char*>(bytes.data()) + offset,
                                       std::min(available, expected));
  if (available != expected || "crc32:" + crc32_hex(block) != checksum) {
    throw FormatError(FormatError::Kind::ChecksumMismatch,
                      "checksum mismatch (" + std::to_string(available) + " of " +
                          std::to_string(expected) + " data bytes present)");
  }
  if (!(ds.z_min <= ds.z_max)) {
    throw FormatError(FormatError::Kind::MalformedHeader, "z_min exceeds z_max");
  }
  ds.transitions.resize(rows);
  const unsigned char* p = block.data();
  for (auto& t : ds.transitions) {
    double v[kColumns];
    for (auto& c : v) {
      c = read_f64_le(p);
      p += 8;
    }
    t = {{v[0], v[1]}, {v[2], v[3]}, v[4], v[5], {v[6], v[7]}, v[8] != 0.0};
  }
  return ds;
}

void save(const OfflineDataset& ds, const std::string& path) { write_file(path, serialize(ds)); }

OfflineDataset load(const std::string& path) { return deserialize(read_file(path)); }

void export_csv(const OfflineDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write '" + path + "'");
  out.precision(17);
  out << "x1,x2,a1,a2,r,ell,x1_next,x2_next,done\n";
  for (const auto& t : ds.transitions) {
    out << t.x.x1 << ',' << t.x.x2 << ',' << t.a.a1 << ',' << t.a.a2 << ',' << t.r << ',' << t.ell
        << ',' << t.x_next.x1 << ',' << t.x_next.x2 << ',' << (t.done ? 1 : 0) << '\n';
  }
}

}  // namespace epiflow
