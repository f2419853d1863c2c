#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace epiflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Activations recorded by a training forward pass, consumed by backward().
struct ForwardCache {
  std::vector<Matrix> layer_inputs;

  bool empty() const { return layer_inputs.empty(); }
  void clear() { layer_inputs.clear(); }
};

/// Feed-forward network: ReLU on hidden layers, identity output. Samples are
/// columns, so a batch input is (input_dim x batch). All parameters live in
/// one flat vector (per layer: weight, column-major, then bias) so optimizers
/// and target copies work on a single block.
class Mlp {
 public:
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  Mlp() = default;
  /// Glorot-uniform weights, zero biases.
  Mlp(std::vector<int> layer_sizes, std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  /// Named parameter blocks ("layer0.weight", "layer0.bias", ...).
  std::vector<Block> blocks() const;

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<Vector> bias(std::size_t layer);

  /// Inference pass. Throws std::invalid_argument on a row-count mismatch.
  Matrix forward(const Matrix& input) const;
  /// Training pass; fills `cache` for a subsequent backward().
  Matrix forward(const Matrix& input, ForwardCache& cache) const;

  /// Parameter gradient of sum(output_grad .* output) for the cached pass.
  /// Throws std::logic_error if the cache is empty.
  Vector backward(const ForwardCache& cache, const Matrix& output_grad) const;

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.params_ == b.params_;
  }

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<std::size_t>(sizes_[layer + 1]) * sizes_[layer];
  }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  Vector m;
  Vector v;
  std::int64_t step = 0;
  AdamConfig cfg;

  OptimizerState() = default;
  OptimizerState(std::size_t n, AdamConfig c)
      : m(Vector::Zero(static_cast<Eigen::Index>(n))),
        v(Vector::Zero(static_cast<Eigen::Index>(n))),
        cfg(c) {}
};

/// Bias-corrected Adam update of `net`. A non-finite gradient throws
/// std::domain_error naming the offending parameter block; parameters are
/// left untouched in that case.
void adam_step(OptimizerState& opt, Mlp& net, const Vector& grad);

/// shadow <- (1 - rho) * shadow + rho * online, rho in (0, 1].
void ema_update(Mlp& shadow, const Mlp& online, double rho);

struct ExpectileLoss {
  double value = 0.0;
  double derivative = 0.0;  // d value / d u
};

/// |tau - 1(u < 0)| * u^2 with tau in (0, 1).
ExpectileLoss expectile_loss(double u, double tau);

struct MlpCheckpoint {
  Mlp net;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
};

/// Versioned text header (architecture, seed, step count, checksum) followed
/// by the little-endian float64 parameter block.
void write_checkpoint(std::ostream& os, const Mlp& net, std::uint64_t seed, std::uint64_t steps);
/// Throws FormatError.
MlpCheckpoint read_checkpoint(std::istream& is);

}  // namespace epiflow
