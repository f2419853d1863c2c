#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epiflow/dataset.hpp"
#include "epiflow/mlp.hpp"

namespace epiflow {

/// Identifies one trainable network of the bundle.
enum class NetId { QHat0, QHat1, VHat, QR0, QR1, VR, QS0, QS1, VS };
std::string_view net_name(NetId id);
inline constexpr std::array<NetId, 9> kAllNets{NetId::QHat0, NetId::QHat1, NetId::VHat,
                                               NetId::QR0,   NetId::QR1,   NetId::VR,
                                               NetId::QS0,   NetId::QS1,   NetId::VS};

/// Fixed affine maps of network inputs onto roughly [-1, 1].
struct InputScaling {
  double x1_center = -0.5, x1_half = 2.5;
  double x2_center = 0.0, x2_half = 2.0;
  double z_center = 0.0, z_half = 1.0;

  static InputScaling from(const StateBox& box, double z_min, double z_max);
  friend bool operator==(const InputScaling&, const InputScaling&) = default;
};

struct ValueTrainConfig {
  double tau = 0.9;
  double lambda = 0.25;
  double gamma = 0.99;
  int batch_size = 256;
  int steps = 100000;
  std::uint64_t seed = 0;
  std::vector<int> hidden{256, 256};
  double lr = 3e-4;
  double ema_rate = 0.005;
  int log_every = 1000;
  /// Treat the last transition of each dataset episode as terminal: targets
  /// there are ell(x), r(x) and min(ell(x), r(x) - z) instead of bootstrapping
  /// through the time limit. Without it the safety recursion collapses to 0 on
  /// every state that can stay safe forever.
  bool terminal_on_done = true;

  /// Throws std::invalid_argument. Accepts tau in [0.5, 1) so the symmetric
  /// (tau = 0.5) ablation can be trained.
  void validate() const;
  friend bool operator==(const ValueTrainConfig&, const ValueTrainConfig&) = default;
};

/// Two independently initialized Q heads with their EMA target copies.
struct TwinCritic {
  std::array<Mlp, 2> heads;
  std::array<Mlp, 2> target;
  std::array<OptimizerState, 2> opt;
};

struct ValueHead {
  Mlp net;
  OptimizerState opt;
};

/// One minibatch in column layout: states and actions are 2 x B.
struct ValueBatch {
  Matrix x, a, x_next;
  RowVector r, ell, z, z_next;
  RowVector done;  // 1 where the transition ends its episode

  static ValueBatch from(const std::vector<SampledTransition>& items);
  Eigen::Index size() const { return x.cols(); }
};

/// The six learned functions: Q-hat(x,z,a), V-hat(x,z), Q_r(x,a), V_r(x),
/// Q_s(x,a), V_s(x). Q networks are twin-headed with EMA targets.
class ValueBundle {
 public:
  TwinCritic q_hat, q_r, q_s;
  ValueHead v_hat, v_r, v_s;
  InputScaling scaling;
  ValueTrainConfig config;
  double z_min = 0.0;
  double z_max = 0.0;

  ValueBundle() = default;
  /// Freshly initialized networks; seeds derive from config.seed.
  ValueBundle(const ValueTrainConfig& cfg, const InputScaling& scaling, double z_min, double z_max);

  Mlp& network(NetId id);
  const Mlp& network(NetId id) const;
  OptimizerState& optimizer(NetId id);

  Matrix input_xza(const Matrix& x, const RowVector& z, const Matrix& a) const;
  Matrix input_xz(const Matrix& x, const RowVector& z) const;
  Matrix input_xa(const Matrix& x, const Matrix& a) const;
  Matrix input_x(const Matrix& x) const;

  RowVector v_hat_at(const Matrix& x, const RowVector& z) const;
  /// Element-wise minimum of the two Q-hat heads (online or target copy).
  RowVector q_hat_min(const Matrix& x, const RowVector& z, const Matrix& a, bool target = false) const;
  RowVector v_r_at(const Matrix& x) const;
  RowVector v_s_at(const Matrix& x) const;

  double v_hat_at(const State& s, double z) const;
  double v_s_at(const State& s) const;
  double v_r_at(const State& s) const;

  friend bool operator==(const ValueBundle& a, const ValueBundle& b);
};

struct LossResult {
  double value = 0.0;
  std::vector<std::pair<NetId, Vector>> grads;

  const Vector& grad(NetId id) const;
};

/// min(ell(x), gamma * V-hat(x', z')).
double q_hat_target(double ell_x, double v_hat_next, double gamma);

/// Squared loss of each Q-hat head against the epigraph target, averaged
/// over heads. The target's V-hat is not differentiated.
LossResult loss_q_hat(const ValueBundle& b, const ValueBatch& batch);
/// Expectile distillation of the clipped target Q-hat into V-hat.
LossResult loss_v_hat(const ValueBundle& b, const ValueBatch& batch, double tau);
/// Q_r regression to r + gamma V_r(x') plus expectile distillation into V_r.
LossResult loss_reward_envelope(const ValueBundle& b, const ValueBatch& batch, double tau);
/// Q_s regression to min(ell, gamma V_s(x')) plus expectile distillation into V_s.
LossResult loss_safety_envelope(const ValueBundle& b, const ValueBatch& batch, double tau);
/// One-sided penalty max(0, V-hat(x,z) - min(V_r(x) - z, V_s(x))); only
/// V-hat receives gradient.
LossResult loss_regularizer(const ValueBundle& b, const ValueBatch& batch);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ValueLogEntry {
  int step = 0;
  double q_hat = 0.0;
  double v_hat = 0.0;
  double reward_envelope = 0.0;
  double safety_envelope = 0.0;
  double regularizer = 0.0;
  double max_abs_v_hat = 0.0;
};

/// Interleaved updates per step: Q-hat, reward envelope, safety envelope,
/// then V-hat on L_V + lambda * L_reg; EMA targets follow each step.
/// Throws TrainingDiverged on a non-finite loss or a runaway V-hat.
ValueBundle train_values(const OfflineDataset& ds, const ValueTrainConfig& cfg,
                         std::vector<ValueLogEntry>* log = nullptr);

/// Manifest + concatenated MLP checkpoints (online and target copies).
void save_values(const ValueBundle& b, const std::string& path);
ValueBundle load_values(const std::string& path);

}  // namespace epiflow
