#include "epiflow/epigraph_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "epiflow/binary_io.hpp"

namespace epiflow {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::istringstream ss(text);
  std::vector<T> out;
  T v{};
  while (ss >> v) out.push_back(v);
  if (!ss.eof()) throw std::invalid_argument("mdp." + key + ": cannot parse '" + text + "'");
  return out;
}

/// Best (sign = +1) or worst (sign = -1) discounted return over all action
/// sequences, ignoring safety.
std::vector<double> extreme_returns(const TabularMDP& m, double sign) {
  std::vector<double> v(m.states(), 0.0), nv(m.states());
  for (int it = 0; it < m.horizon; ++it) {
    for (std::size_t s = 0; s < m.states(); ++s) {
      double best = kNegInf;
      for (int n : m.next[s]) best = std::max(best, sign * v[static_cast<std::size_t>(n)]);
      nv[s] = m.reward[s] + m.gamma * sign * best;
    }
    std::swap(v, nv);
  }
  return v;
}

}  // namespace

double TabularMDP::max_abs_reward() const {
  double out = 0.0;
  for (double r : reward) out = std::max(out, std::abs(r));
  return out;
}

double TabularMDP::max_abs_safety() const {
  double out = 0.0;
  for (double l : safety) out = std::max(out, std::abs(l));
  return out;
}

void TabularMDP::validate() const {
  if (reward.empty()) throw std::invalid_argument("MDP has no states");
  if (safety.size() != reward.size() || next.size() != reward.size()) {
    throw std::invalid_argument("MDP tables disagree on the number of states");
  }
  if (next.front().empty()) throw std::invalid_argument("MDP has no actions");
  for (std::size_t s = 0; s < next.size(); ++s) {
    if (next[s].size() != next.front().size()) {
      throw std::invalid_argument("state " + std::to_string(s) + " has a different action count");
    }
    for (int n : next[s]) {
      if (n < 0 || static_cast<std::size_t>(n) >= reward.size()) {
        throw std::invalid_argument("state " + std::to_string(s) + " has successor " +
                                    std::to_string(n) + " out of range");
      }
    }
  }
  for (std::size_t s = 0; s < reward.size(); ++s) {
    if (!std::isfinite(reward[s]) || !std::isfinite(safety[s])) {
      throw std::invalid_argument("non-finite reward or safety at state " + std::to_string(s));
    }
  }
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("MDP gamma must lie in (0, 1)");
  if (horizon < 1) throw std::invalid_argument("MDP horizon must be >= 1");
}

TabularMDP parse_mdp(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("MDP file: ") + e.what());
  }
  const auto section = tree.get_child_optional("mdp");
  if (!section) throw std::invalid_argument("MDP file has no [mdp] section");
  const auto& sec = *section;
  try {
    TabularMDP m;
    const auto n_states = sec.get<int>("states");
    const auto n_actions = sec.get<int>("actions");
    if (n_states < 1 || n_actions < 1) throw std::invalid_argument("states and actions must be >= 1");
    m.gamma = sec.get<double>("gamma");
    m.horizon = sec.get<int>("horizon", m.horizon);
    m.reward = parse_list<double>(sec.get<std::string>("reward"), "reward");
    m.safety = parse_list<double>(sec.get<std::string>("safety"), "safety");
    for (int s = 0; s < n_states; ++s) {
      const std::string key = "next." + std::to_string(s);
      m.next.push_back(parse_list<int>(sec.get<std::string>(pt::ptree::path_type(key, '/')), key));
      if (static_cast<int>(m.next.back().size()) != n_actions) {
        throw std::invalid_argument("mdp." + key + " must list " + std::to_string(n_actions) +
                                    " successors");
      }
    }
    if (static_cast<int>(m.reward.size()) != n_states || static_cast<int>(m.safety.size()) != n_states) {
      throw std::invalid_argument("reward and safety must list " + std::to_string(n_states) + " values");
    }
    for (const auto& [key, _] : sec) {
      const bool known = key == "states" || key == "actions" || key == "gamma" || key == "horizon" ||
                         key == "reward" || key == "safety" || key.rfind("next.", 0) == 0;
      if (!known) throw std::invalid_argument("unknown key mdp." + key);
    }
    m.validate();
    return m;
  } catch (const pt::ptree_error& e) {
    throw std::invalid_argument(std::string("MDP file: ") + e.what());
  }
}

TabularMDP load_mdp(const std::string& path) { return parse_mdp(read_file(path)); }

std::vector<double> default_z_grid(const TabularMDP& m, int n_z) {
  m.validate();
  if (n_z < 2) throw std::invalid_argument("z grid needs at least two points");
  const auto hi = extreme_returns(m, 1.0);
  auto lo = extreme_returns(m, -1.0);
  const double slack = 1.0 + m.max_abs_safety();
  const double z_lo = *std::min_element(lo.begin(), lo.end()) - slack;
  const double z_hi = *std::max_element(hi.begin(), hi.end()) + slack;
  std::vector<double> z(static_cast<std::size_t>(n_z));
  for (int k = 0; k < n_z; ++k) z[static_cast<std::size_t>(k)] = z_lo + (z_hi - z_lo) * k / (n_z - 1);
  return z;
}

std::vector<double> brute_force_constrained_value(const TabularMDP& m) {
  m.validate();
  const std::size_t n = m.states();
  std::vector<char> safe(n);
  for (std::size_t s = 0; s < n; ++s) safe[s] = m.safety[s] >= 0.0;
  // Shrink to the largest set in which every state has a successor inside it.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t s = 0; s < n; ++s) {
      if (!safe[s]) continue;
      const bool stays = std::any_of(m.next[s].begin(), m.next[s].end(),
                                     [&](int t) { return safe[static_cast<std::size_t>(t)] != 0; });
      if (!stays) {
        safe[s] = 0;
        changed = true;
      }
    }
  }
  std::vector<double> v(n, 0.0), nv(n);
  for (int it = 0; it < m.horizon; ++it) {
    for (std::size_t s = 0; s < n; ++s) {
      if (!safe[s]) continue;
      double best = kNegInf;
      for (int t : m.next[s])
        if (safe[static_cast<std::size_t>(t)]) best = std::max(best, v[static_cast<std::size_t>(t)]);
      nv[s] = m.reward[s] + m.gamma * best;
    }
    for (std::size_t s = 0; s < n; ++s)
      if (safe[s]) v[s] = nv[s];
  }
  for (std::size_t s = 0; s < n; ++s)
    if (!safe[s]) v[s] = kNegInf;
  return v;
}

double interpolate_row(const std::vector<double>& z, const std::vector<double>& row, double zq) {
  const double lo = z.front();
  const double hi = z.back();
  if (zq <= lo) return row.front();
  if (zq >= hi) return row.back() - (zq - hi);
  const double h = (hi - lo) / static_cast<double>(z.size() - 1);
  const auto k = std::min(static_cast<std::size_t>((zq - lo) / h), z.size() - 2);
  const double w = (zq - z[k]) / h;
  return (1.0 - w) * row[k] + w * row[k + 1];
}

EpigraphGrid value_iteration_epigraph(const TabularMDP& m, std::vector<double> z_grid, double tol,
                                      int max_iterations) {
  m.validate();
  if (z_grid.size() < 2) throw std::invalid_argument("z grid needs at least two points");
  for (std::size_t k = 1; k < z_grid.size(); ++k) {
    if (!(z_grid[k] > z_grid[k - 1])) throw std::invalid_argument("z grid must be strictly ascending");
  }
  const std::size_t n = m.states();
  const std::size_t nz = z_grid.size();
  EpigraphGrid g;
  g.z = std::move(z_grid);
  g.value.assign(n, {});
  for (std::size_t s = 0; s < n; ++s) g.value[s].assign(nz, m.safety[s]);

  auto next_value = g.value;
  for (int it = 1; it <= max_iterations; ++it) {
    double change = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < nz; ++k) {
        const double z_next = (g.z[k] - m.reward[s]) / m.gamma;
        double best = kNegInf;
        for (int t : m.next[s]) {
          best = std::max(best, interpolate_row(g.z, g.value[static_cast<std::size_t>(t)], z_next));
        }
        const double v = std::min(m.safety[s], m.gamma * best);
        change = std::max(change, std::abs(v - g.value[s][k]));
        next_value[s][k] = v;
      }
    }
    std::swap(g.value, next_value);
    g.iterations = it;
    g.final_change = change;
    if (change < tol) return g;
  }
  throw OracleDidNotConverge("epigraph value iteration did not converge within " +
                             std::to_string(max_iterations) + " sweeps (last change " +
                             std::to_string(g.final_change) + ")");
}

std::vector<RecoveredValue> recover_value(const EpigraphGrid& grid) {
  std::vector<RecoveredValue> out;
  out.reserve(grid.value.size());
  for (const auto& row : grid.value) {
    RecoveredValue r;
    if (row.front() < 0.0) {
      r.value = kNegInf;
    } else if (row.back() >= 0.0) {
      r.value = grid.z_hi();
      r.saturated = true;
    } else {
      std::size_t k = row.size() - 1;
      while (row[k] < 0.0) --k;  // row[0] >= 0 stops the scan
      const double w = row[k] / (row[k] - row[k + 1]);
      r.value = grid.z[k] + w * (grid.z[k + 1] - grid.z[k]);
    }
    out.push_back(r);
  }
  return out;
}

EquivalenceReport check_equivalence(const TabularMDP& m, int n_z) {
  EquivalenceReport rep;
  auto z = default_z_grid(m, n_z);
  const double spacing = z[1] - z[0];
  const double tail = std::pow(m.gamma, m.horizon) * m.max_abs_reward() / (1.0 - m.gamma);
  if (tail >= spacing) {
    throw std::invalid_argument("MDP horizon too short: truncated tail " + std::to_string(tail) +
                                " exceeds the grid spacing " + std::to_string(spacing));
  }
  rep.brute_force = brute_force_constrained_value(m);
  rep.grid = value_iteration_epigraph(m, std::move(z));
  rep.recovered = recover_value(rep.grid);
  for (std::size_t s = 0; s < m.states(); ++s) {
    const bool bf_feasible = std::isfinite(rep.brute_force[s]);
    const bool vi_feasible = std::isfinite(rep.recovered[s].value);
    if (bf_feasible != vi_feasible) {
      rep.infeasibility_agrees = false;
      continue;
    }
    if (bf_feasible) {
      rep.max_discrepancy =
          std::max(rep.max_discrepancy, std::abs(rep.recovered[s].value - rep.brute_force[s]));
    }
  }
  return rep;
}

}  // namespace epiflow
