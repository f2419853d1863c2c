#include "epiflow/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace epiflow {
namespace {

void check_finite(const RowVector& v) {
  if (!v.allFinite()) throw std::domain_error("non-finite V-hat evaluation during bisection");
}

Matrix to_matrix(const std::vector<State>& states) {
  Matrix x(2, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    x(0, static_cast<Eigen::Index>(i)) = states[i].x1;
    x(1, static_cast<Eigen::Index>(i)) = states[i].x2;
  }
  return x;
}

}  // namespace

void ThresholdConfig::validate() const {
  if (!std::isfinite(z_lo) || !std::isfinite(z_hi) || !(z_lo < z_hi)) {
    throw std::invalid_argument("threshold interval needs finite z_lo < z_hi");
  }
  if (iterations < 1) throw std::invalid_argument("threshold.iterations must be >= 1");
  if (scan_points != 0 && scan_points < 2) {
    throw std::invalid_argument("threshold.scan_points must be 0 or >= 2");
  }
}

const char* status_name(ThresholdStatus s) {
  switch (s) {
    case ThresholdStatus::Interior: return "interior";
    case ThresholdStatus::Infeasible: return "infeasible";
    case ThresholdStatus::Saturated: return "saturated";
  }
  return "?";
}

ThresholdResult z_star(const ScalarEvaluator& vhat, const State& x, const ThresholdConfig& cfg) {
  const BatchEvaluator batch = [&](const Matrix& xs, const RowVector& z) {
    RowVector out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = vhat({xs(0, i), xs(1, i)}, z[i]);
    return out;
  };
  return z_star_batch(batch, {x}, cfg).front();
}

std::vector<ThresholdResult> z_star_batch(const BatchEvaluator& vhat, const std::vector<State>& states,
                                          const ThresholdConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(states.size());
  std::vector<ThresholdResult> out(states.size());
  if (n == 0) return out;
  const Matrix x = to_matrix(states);

  RowVector lo = RowVector::Constant(n, cfg.z_lo);
  RowVector hi = RowVector::Constant(n, cfg.z_hi);
  const RowVector v_lo = vhat(x, lo);
  const RowVector v_hi = vhat(x, hi);
  check_finite(v_lo);
  check_finite(v_hi);

  if (cfg.scan_points > 0) {
    // Bracket at the largest-z sign change so non-monotone V-hat still
    // resolves toward sup{z : V-hat >= 0}.
    const int m = cfg.scan_points;
    std::vector<RowVector> scan(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const double zj = cfg.z_lo + (cfg.z_hi - cfg.z_lo) * j / (m - 1);
      scan[static_cast<std::size_t>(j)] = vhat(x, RowVector::Constant(n, zj));
      check_finite(scan[static_cast<std::size_t>(j)]);
    }
    int non_monotone = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& res = out[static_cast<std::size_t>(i)];
      for (int j = 1; j < m; ++j) {
        const bool a = scan[static_cast<std::size_t>(j - 1)][i] >= 0.0;
        const bool b = scan[static_cast<std::size_t>(j)][i] >= 0.0;
        if (a != b) ++res.sign_changes;
        if (a && !b) {
          lo[i] = cfg.z_lo + (cfg.z_hi - cfg.z_lo) * (j - 1) / (m - 1);
          hi[i] = cfg.z_lo + (cfg.z_hi - cfg.z_lo) * j / (m - 1);
        }
      }
      if (res.sign_changes > 1) ++non_monotone;
    }
    if (non_monotone > 0) {
      spdlog::debug("threshold: {} of {} states have a non-monotone V-hat along z", non_monotone, n);
    }
  }

  std::vector<char> active(states.size(), 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& res = out[static_cast<std::size_t>(i)];
    if (v_lo[i] < 0.0) {
      res.status = ThresholdStatus::Infeasible;
      res.z = cfg.z_lo;
      active[static_cast<std::size_t>(i)] = 0;
    } else if (v_hi[i] >= 0.0) {
      res.status = ThresholdStatus::Saturated;
      res.z = cfg.z_hi;
      active[static_cast<std::size_t>(i)] = 0;
    }
  }

  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (active[static_cast<std::size_t>(i)]) idx.push_back(i);
  const auto k = static_cast<Eigen::Index>(idx.size());
  if (k == 0) return out;
  Matrix xa(2, k);
  RowVector la(k), ha(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    xa.col(j) = x.col(idx[static_cast<std::size_t>(j)]);
    la[j] = lo[idx[static_cast<std::size_t>(j)]];
    ha[j] = hi[idx[static_cast<std::size_t>(j)]];
  }
  for (int it = 0; it < cfg.iterations; ++it) {
    const RowVector mid = 0.5 * (la + ha);
    const RowVector v = vhat(xa, mid);
    check_finite(v);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (v[j] >= 0.0) {
        la[j] = mid[j];
      } else {
        ha[j] = mid[j];
      }
    }
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    out[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])].z =
        std::clamp(0.5 * (la[j] + ha[j]), cfg.z_lo, cfg.z_hi);
  }
  return out;
}

}  // namespace epiflow
