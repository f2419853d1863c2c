#include "epiflow/mlp.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "epiflow/binary_io.hpp"
#include "epiflow/common.hpp"

namespace epiflow {

Mlp::Mlp(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output sizes");
  for (int s : sizes_)
    if (s < 0) throw std::invalid_argument("layer sizes must be non-negative");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(total));
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double fan = sizes_[l] + sizes_[l + 1];
    const double limit = fan > 0 ? std::sqrt(6.0 / fan) : 0.0;
    std::uniform_real_distribution<double> init(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = init(rng);
  }
}

std::vector<Mlp::Block> Mlp::blocks() const {
  std::vector<Block> out;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const auto wsize = static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l];
    out.push_back({"layer" + std::to_string(l) + ".weight", weight_offset(l), wsize});
    out.push_back({"layer" + std::to_string(l) + ".bias", bias_offset(l),
                   static_cast<std::size_t>(sizes_[l + 1])});
  }
  return out;
}

Eigen::Map<const Matrix> Mlp::weight(std::size_t l) const {
  return {params_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Vector> Mlp::bias(std::size_t l) const {
  return {params_.data() + bias_offset(l), sizes_[l + 1]};
}
Eigen::Map<Matrix> Mlp::weight(std::size_t l) {
  return {params_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Vector> Mlp::bias(std::size_t l) {
  return {params_.data() + bias_offset(l), sizes_[l + 1]};
}

Matrix Mlp::forward(const Matrix& input) const {
  if (sizes_.empty() || input.rows() != input_dim()) {
    throw std::invalid_argument("MLP input has " + std::to_string(input.rows()) +
                                " rows, expected " + std::to_string(sizes_.empty() ? 0 : input_dim()));
  }
  Matrix act = input;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Matrix z = weight(l) * act;
    z.colwise() += bias(l);
    if (l + 1 < layer_count()) z = z.cwiseMax(0.0);
    act = std::move(z);
  }
  return act;
}

Matrix Mlp::forward(const Matrix& input, ForwardCache& cache) const {
  if (sizes_.empty() || input.rows() != input_dim()) {
    throw std::invalid_argument("MLP input has " + std::to_string(input.rows()) +
                                " rows, expected " + std::to_string(sizes_.empty() ? 0 : input_dim()));
  }
  cache.layer_inputs.resize(layer_count());
  cache.layer_inputs[0] = input;
  Matrix out;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Matrix z = weight(l) * cache.layer_inputs[l];
    z.colwise() += bias(l);
    if (l + 1 < layer_count()) {
      cache.layer_inputs[l + 1] = z.cwiseMax(0.0);
    } else {
      out = std::move(z);
    }
  }
  return out;
}

Vector Mlp::backward(const ForwardCache& cache, const Matrix& output_grad) const {
  if (cache.layer_inputs.size() != layer_count()) {
    throw std::logic_error("backward() called without a cached forward pass");
  }
  const Eigen::Index batch = cache.layer_inputs[0].cols();
  if (output_grad.rows() != output_dim() || output_grad.cols() != batch) {
    throw std::invalid_argument("output gradient shape does not match the cached pass");
  }
  Vector grad = Vector::Zero(params_.size());
  Matrix g = output_grad;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const Matrix& a = cache.layer_inputs[l];
    Eigen::Map<Matrix>(grad.data() + weight_offset(l), sizes_[l + 1], sizes_[l]).noalias() =
        g * a.transpose();
    Eigen::Map<Vector>(grad.data() + bias_offset(l), sizes_[l + 1]) = g.rowwise().sum();
    if (l > 0) {
      Matrix back = weight(l).transpose() * g;
      // ReLU derivative: the next layer's input is positive exactly where the
      // pre-activation was.
      g = (a.array() > 0.0).select(back.array(), 0.0).matrix();
    }
  }
  return grad;
}

void adam_step(OptimizerState& opt, Mlp& net, const Vector& grad) {
  Vector& p = net.parameters();
  if (grad.size() != p.size() || opt.m.size() != p.size() || opt.v.size() != p.size()) {
    throw std::invalid_argument("optimizer state, gradient and parameters differ in size");
  }
  if (!grad.allFinite()) {
    for (const auto& b : net.blocks()) {
      if (!grad.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size))
               .allFinite()) {
        throw std::domain_error("non-finite gradient in parameter block " + b.name);
      }
    }
  }
  const auto& c = opt.cfg;
  ++opt.step;
  opt.m = c.beta1 * opt.m + (1.0 - c.beta1) * grad;
  opt.v = c.beta2 * opt.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  p.array() -= c.lr * (opt.m.array() / bc1) / ((opt.v.array() / bc2).sqrt() + c.eps);
}

void ema_update(Mlp& shadow, const Mlp& online, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("EMA rate must lie in (0, 1]");
  if (shadow.layer_sizes() != online.layer_sizes()) {
    throw std::invalid_argument("EMA target and online network differ in shape");
  }
  if (rho == 1.0) {
    shadow.parameters() = online.parameters();
    return;
  }
  shadow.parameters() = (1.0 - rho) * shadow.parameters() + rho * online.parameters();
}

ExpectileLoss expectile_loss(double u, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("expectile tau must lie in (0, 1)");
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return {w * u * u, 2.0 * w * u};
}

void write_checkpoint(std::ostream& os, const Mlp& net, std::uint64_t seed, std::uint64_t steps) {
  std::vector<unsigned char> block;
  block.reserve(net.parameter_count() * 8);
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) append_f64_le(block, net.parameters()[i]);
  TextHeader h{"epiflow-mlp", "v1", {}};
  std::string layers;
  for (int s : net.layer_sizes()) layers += (layers.empty() ? "" : " ") + std::to_string(s);
  h.set("layers", layers);
  h.set("activation", "relu");
  h.set("seed", std::to_string(seed));
  h.set("steps", std::to_string(steps));
  h.set("params", std::to_string(net.parameter_count()));
  h.set("checksum", "crc32:" + crc32_hex(block));
  h.write(os);
  os.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size()));
}

MlpCheckpoint read_checkpoint(std::istream& is) {
  const TextHeader h = TextHeader::read(is, "epiflow-mlp", "v1");
  std::vector<int> sizes;
  {
    std::istringstream ss(h.get("layers"));
    int s = 0;
    while (ss >> s) sizes.push_back(s);
  }
  if (sizes.size() < 2) throw FormatError(FormatError::Kind::MalformedHeader, "bad layer list");
  MlpCheckpoint ck;
  try {
    ck.seed = std::stoull(h.get("seed"));
    ck.steps = std::stoull(h.get("steps"));
  } catch (const std::logic_error&) {
    throw FormatError(FormatError::Kind::MalformedHeader, "bad seed/steps field");
  }
  ck.net = Mlp(sizes, 0);
  if (std::to_string(ck.net.parameter_count()) != h.get("params")) {
    throw FormatError(FormatError::Kind::MalformedHeader, "parameter count does not match layers");
  }
  std::vector<unsigned char> block(ck.net.parameter_count() * 8);
  is.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()));
  if (static_cast<std::size_t>(is.gcount()) != block.size() ||
      "crc32:" + crc32_hex(block) != h.get("checksum")) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, "MLP parameter block checksum mismatch");
  }
  for (std::size_t i = 0; i < ck.net.parameter_count(); ++i) {
    ck.net.parameters()[static_cast<Eigen::Index>(i)] = read_f64_le(block.data() + 8 * i);
  }
  return ck;
}

}  // namespace epiflow
