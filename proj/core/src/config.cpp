#include "epiflow/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "epiflow/binary_io.hpp"

namespace epiflow {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

long long to_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  if (!s.empty() && s.front() == '-') throw std::invalid_argument("negative");
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::vector<double> doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& w : words(s)) out.push_back(to_double(w));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (const auto& x : v) out += (out.empty() ? "" : " ") + f(x);
  return out;
}

std::vector<double> fixed_doubles(const std::string& s, std::size_t n) {
  auto v = doubles(s);
  if (v.size() != n) throw std::invalid_argument("expected " + std::to_string(n) + " numbers");
  return v;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::vector<Field> fields() {
  std::vector<Field> f;
  auto dbl = [&f](const std::string& sec, const std::string& key, auto member) {
    f.push_back({sec, key, [member](RunConfig& c, const std::string& v) { member(c) = to_double(v); },
                 [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }});
  };
  auto integer = [&f](const std::string& sec, const std::string& key, auto member) {
    f.push_back({sec, key,
                 [member](RunConfig& c, const std::string& v) {
                   member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_int(v));
                 },
                 [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
  };
  auto u64 = [&f](const std::string& sec, const std::string& key, auto member) {
    f.push_back({sec, key, [member](RunConfig& c, const std::string& v) { member(c) = to_u64(v); },
                 [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
  };
  auto boolean = [&f](const std::string& sec, const std::string& key, auto member) {
    f.push_back({sec, key, [member](RunConfig& c, const std::string& v) { member(c) = to_bool(v); },
                 [member](const RunConfig& c) {
                   return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                 }});
  };
  auto ints = [&f](const std::string& sec, const std::string& key, auto member) {
    f.push_back({sec, key,
                 [member](RunConfig& c, const std::string& v) {
                   std::vector<int> out;
                   for (const auto& w : words(v)) out.push_back(static_cast<int>(to_int(w)));
                   member(c) = out;
                 },
                 [member](const RunConfig& c) {
                   return join(member(const_cast<RunConfig&>(c)), [](int x) { return std::to_string(x); });
                 }});
  };

  // [env]
  dbl("env", "dt", [](RunConfig& c) -> double& { return c.env.dt; });
  dbl("env", "gamma", [](RunConfig& c) -> double& { return c.env.gamma; });
  f.push_back({"env", "goal",
               [](RunConfig& c, const std::string& v) {
                 const auto g = fixed_doubles(v, 2);
                 c.env.goal = {g[0], g[1]};
               },
               [](const RunConfig& c) { return fmt_double(c.env.goal.x1) + " " + fmt_double(c.env.goal.x2); }});
  dbl("env", "reward_scale", [](RunConfig& c) -> double& { return c.env.reward_scale; });
  integer("env", "episode_length", [](RunConfig& c) -> int& { return c.env.episode_length; });
  f.push_back({"env", "box",
               [](RunConfig& c, const std::string& v) {
                 const auto b = fixed_doubles(v, 4);
                 c.env.box = {b[0], b[1], b[2], b[3]};
               },
               [](const RunConfig& c) {
                 const auto& b = c.env.box;
                 return fmt_double(b.x1_min) + " " + fmt_double(b.x1_max) + " " + fmt_double(b.x2_min) + " " +
                        fmt_double(b.x2_max);
               }});
  f.push_back({"env", "obstacles",
               [](RunConfig& c, const std::string& v) {
                 std::vector<std::string> parts;
                 boost::split(parts, v, boost::is_any_of(","));
                 c.env.obstacles.clear();
                 for (const auto& p : parts) {
                   if (boost::trim_copy(p).empty()) continue;
                   const auto o = fixed_doubles(p, 3);
                   c.env.obstacles.push_back({{o[0], o[1]}, o[2]});
                 }
               },
               [](const RunConfig& c) {
                 std::string out;
                 for (const auto& o : c.env.obstacles) {
                   out += (out.empty() ? "" : ", ") + fmt_double(o.center.x1) + " " + fmt_double(o.center.x2) +
                          " " + fmt_double(o.radius);
                 }
                 return out;
               }});

  // [dataset]
  integer("dataset", "n_traj", [](RunConfig& c) -> int& { return c.dataset.n_traj; });
  integer("dataset", "horizon", [](RunConfig& c) -> int& { return c.dataset.horizon; });
  u64("dataset", "seed", [](RunConfig& c) -> std::uint64_t& { return c.dataset.seed; });
  u64("dataset", "max_transitions", [](RunConfig& c) -> std::size_t& { return c.dataset.max_transitions; });

  // [values]
  dbl("values", "tau", [](RunConfig& c) -> double& { return c.pipeline.values.tau; });
  dbl("values", "lambda", [](RunConfig& c) -> double& { return c.pipeline.values.lambda; });
  integer("values", "batch_size", [](RunConfig& c) -> int& { return c.pipeline.values.batch_size; });
  integer("values", "steps", [](RunConfig& c) -> int& { return c.pipeline.values.steps; });
  ints("values", "hidden", [](RunConfig& c) -> std::vector<int>& { return c.pipeline.values.hidden; });
  dbl("values", "lr", [](RunConfig& c) -> double& { return c.pipeline.values.lr; });
  dbl("values", "ema_rate", [](RunConfig& c) -> double& { return c.pipeline.values.ema_rate; });
  boolean("values", "terminal_on_done", [](RunConfig& c) -> bool& { return c.pipeline.values.terminal_on_done; });
  integer("values", "log_every", [](RunConfig& c) -> int& { return c.pipeline.values.log_every; });

  // [policy]
  integer("policy", "integration_steps", [](RunConfig& c) -> int& { return c.pipeline.policy.integration_steps; });
  integer("policy", "candidates", [](RunConfig& c) -> int& { return c.pipeline.policy.candidates; });
  dbl("policy", "alpha", [](RunConfig& c) -> double& { return c.pipeline.policy.alpha; });
  dbl("policy", "clip_feasible", [](RunConfig& c) -> double& { return c.pipeline.policy.clip_feasible; });
  dbl("policy", "clip_infeasible", [](RunConfig& c) -> double& { return c.pipeline.policy.clip_infeasible; });
  boolean("policy", "condition_on_z", [](RunConfig& c) -> bool& { return c.pipeline.policy.condition_on_z; });
  ints("policy", "hidden", [](RunConfig& c) -> std::vector<int>& { return c.pipeline.policy.hidden; });
  integer("policy", "batch_size", [](RunConfig& c) -> int& { return c.pipeline.policy.train.batch_size; });
  integer("policy", "steps", [](RunConfig& c) -> int& { return c.pipeline.policy.train.steps; });
  dbl("policy", "lr", [](RunConfig& c) -> double& { return c.pipeline.policy.train.lr; });
  dbl("policy", "lr_final_fraction",
      [](RunConfig& c) -> double& { return c.pipeline.policy.train.lr_final_fraction; });
  integer("policy", "log_every", [](RunConfig& c) -> int& { return c.pipeline.policy.train.log_every; });

  // [threshold]
  f.push_back({"threshold", "z_range",
               [](RunConfig& c, const std::string& v) {
                 if (boost::trim_copy(v) == "dataset") {
                   c.pipeline.threshold_from_dataset = true;
                   return;
                 }
                 const auto r = fixed_doubles(v, 2);
                 c.pipeline.threshold_from_dataset = false;
                 c.pipeline.threshold.z_lo = r[0];
                 c.pipeline.threshold.z_hi = r[1];
               },
               [](const RunConfig& c) {
                 return c.pipeline.threshold_from_dataset
                            ? std::string("dataset")
                            : fmt_double(c.pipeline.threshold.z_lo) + " " + fmt_double(c.pipeline.threshold.z_hi);
               }});
  integer("threshold", "iterations", [](RunConfig& c) -> int& { return c.pipeline.threshold.iterations; });
  integer("threshold", "scan_points", [](RunConfig& c) -> int& { return c.pipeline.threshold.scan_points; });

  // [eval]
  integer("eval", "n_episodes", [](RunConfig& c) -> int& { return c.pipeline.eval.n_episodes; });
  f.push_back({"eval", "seeds",
               [](RunConfig& c, const std::string& v) {
                 c.pipeline.eval.seeds.clear();
                 for (const auto& w : words(v)) c.pipeline.eval.seeds.push_back(to_u64(w));
               },
               [](const RunConfig& c) {
                 return join(c.pipeline.eval.seeds, [](std::uint64_t s) { return std::to_string(s); });
               }});
  integer("eval", "horizon", [](RunConfig& c) -> int& { return c.pipeline.eval.horizon; });
  f.push_back({"eval", "perturbation_levels",
               [](RunConfig& c, const std::string& v) { c.pipeline.eval.perturbation_levels = doubles(v); },
               [](const RunConfig& c) { return join(c.pipeline.eval.perturbation_levels, fmt_double); }});
  dbl("eval", "perturbation", [](RunConfig& c) -> double& { return c.pipeline.eval.perturbation; });
  integer("eval", "max_initial_tries", [](RunConfig& c) -> int& { return c.pipeline.eval.max_initial_tries; });

  // [run]
  u64("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
  f.push_back({"run", "out", [](RunConfig& c, const std::string& v) { c.out = boost::trim_copy(v); },
               [](const RunConfig& c) { return c.out; }});
  integer("run", "threads", [](RunConfig& c) -> int& { return c.threads; });
  return f;
}

const std::vector<Field>& field_table() {
  static const std::vector<Field> table = fields();
  return table;
}

const std::vector<std::string> kSections{"env", "dataset", "values", "policy", "threshold", "eval", "run"};

}  // namespace

void RunConfig::finalize() {
  env.validate();
  pipeline.values.gamma = env.gamma;
  pipeline.eval.threads = threads;
  if (dataset.n_traj < 1 || dataset.horizon < 1) throw std::invalid_argument("dataset sizes must be >= 1");
  pipeline.values.validate();
  pipeline.policy.validate();
  if (!pipeline.threshold_from_dataset) pipeline.threshold.validate();
  if (pipeline.threshold.iterations < 1) throw std::invalid_argument("threshold.iterations must be >= 1");
  pipeline.eval.validate();
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  std::vector<std::string> errors;
  // The INI reader drops empty sections, so record headers from the text.
  {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      boost::trim(line);
      if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
        const std::string name = boost::trim_copy(line.substr(1, line.size() - 2));
        if (std::find(kSections.begin(), kSections.end(), name) != kSections.end()) {
          cfg.sections.insert(name);
        } else {
          errors.push_back("unknown section [" + name + "]");
        }
      }
    }
  }
  for (const auto& [section, body] : tree) {
    if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
      if (body.empty()) errors.push_back("key '" + section + "' outside any section");
      continue;
    }
    for (const auto& [key, value] : body) {
      const auto& table = field_table();
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) {
        errors.push_back("unknown key " + section + "." + key);
        continue;
      }
      const std::string raw = boost::trim_copy(value.data());
      try {
        it->set(cfg, raw);
      } catch (const std::exception& e) {
        errors.push_back("bad value for " + section + "." + key + " = '" + raw + "' (" + e.what() + ")");
      }
    }
  }
  if (!errors.empty()) throw ConfigError(boost::join(errors, "; "));
  try {
    cfg.finalize();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& section : kSections) {
    out << '[' << section << "]\n";
    for (const auto& f : field_table())
      if (f.section == section) out << f.key << " = " << f.get(cfg) << '\n';
    out << '\n';
  }
  return out.str();
}

void require_sections(const RunConfig& cfg, const std::vector<std::string>& names) {
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!cfg.sections.count(n)) missing.push_back("[" + n + "]");
  if (!missing.empty()) throw ConfigError("config is missing section(s): " + boost::join(missing, ", "));
}

}  // namespace epiflow
