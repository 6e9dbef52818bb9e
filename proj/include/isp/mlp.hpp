#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "isp/errors.hpp"
#include "isp/random.hpp"

namespace isp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Fully connected network with rectifier hidden layers and a linear output.
///
/// All weights and biases live in one flat vector. Layer l stores its weight
/// matrix (widths[l+1] x widths[l], column-major) followed by its bias.
struct MlpParams {
  std::vector<int> widths;
  VectorXd flat;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }

  Eigen::Index weight_offset(int layer) const {
    Eigen::Index off = 0;
    for (int l = 0; l < layer; ++l) off += static_cast<Eigen::Index>(widths[l + 1]) * (widths[l] + 1);
    return off;
  }
  Eigen::Index bias_offset(int layer) const {
    return weight_offset(layer) + static_cast<Eigen::Index>(widths[layer + 1]) * widths[layer];
  }

  Eigen::Map<const MatrixXd> weight(int layer) const {
    return {flat.data() + weight_offset(layer), widths[layer + 1], widths[layer]};
  }
  Eigen::Map<MatrixXd> weight(int layer) {
    return {flat.data() + weight_offset(layer), widths[layer + 1], widths[layer]};
  }
  Eigen::Map<const VectorXd> bias(int layer) const {
    return {flat.data() + bias_offset(layer), widths[layer + 1]};
  }
  Eigen::Map<VectorXd> bias(int layer) {
    return {flat.data() + bias_offset(layer), widths[layer + 1]};
  }
};

inline Eigen::Index parameter_count(const std::vector<int>& widths) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += static_cast<Eigen::Index>(widths[l + 1]) * (widths[l] + 1);
  }
  return n;
}

/// Zero-initialized network with the given layer widths (input first).
inline MlpParams make_mlp(std::vector<int> widths) {
  if (widths.size() < 2) throw ShapeError("mlp: need at least input and output widths");
  for (int w : widths) {
    if (w < 1) throw ShapeError("mlp: layer widths must be positive");
  }
  MlpParams p;
  p.flat = VectorXd::Zero(parameter_count(widths));
  p.widths = std::move(widths);
  return p;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
inline void init_uniform(MlpParams& p, Rng& rng) {
  for (int l = 0; l < p.layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.widths[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = p.weight(l);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = dist(rng);
    auto b = p.bias(l);
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = dist(rng);
  }
}

inline MlpParams make_mlp(std::vector<int> widths, Rng& rng) {
  MlpParams p = make_mlp(std::move(widths));
  init_uniform(p, rng);
  return p;
}

/// Activations recorded by a batched forward pass; column j is sample j.
struct MlpTape {
  std::vector<MatrixXd> activations;  // [0] = input, [l] = output of hidden layer l
};

inline MatrixXd forward(const MlpParams& p, const MatrixXd& input, MlpTape* tape = nullptr) {
  if (input.rows() != p.input_width()) {
    throw ShapeError("mlp forward: input width " + std::to_string(input.rows()) + ", expected " +
                     std::to_string(p.input_width()));
  }
  if (tape) {
    tape->activations.resize(p.layer_count());
    tape->activations[0] = input;
  }
  MatrixXd h = input;
  for (int l = 0; l < p.layer_count(); ++l) {
    MatrixXd z = p.weight(l) * h;
    z.colwise() += p.bias(l);
    if (l + 1 < p.layer_count()) {
      h = z.cwiseMax(0.0);
      if (tape) tape->activations[l + 1] = h;
    } else {
      h = std::move(z);
    }
  }
  return h;
}

inline VectorXd forward(const MlpParams& p, const VectorXd& input) {
  return forward(p, MatrixXd(input)).col(0);
}

struct MlpGradient {
  VectorXd params;  // summed over the batch
  MatrixXd input;   // per sample
};

/// Reverse pass for the forward call that filled `tape`.
inline MlpGradient backward(const MlpParams& p, const MlpTape& tape, const MatrixXd& output_grad) {
  if (static_cast<int>(tape.activations.size()) != p.layer_count()) {
    throw ShapeError("mlp backward: tape does not match network depth");
  }
  const Eigen::Index batch = tape.activations[0].cols();
  if (output_grad.rows() != p.output_width() || output_grad.cols() != batch) {
    throw ShapeError("mlp backward: output gradient shape mismatch");
  }
  MlpGradient g;
  g.params = VectorXd::Zero(p.flat.size());
  MatrixXd delta = output_grad;
  for (int l = p.layer_count() - 1; l >= 0; --l) {
    const MatrixXd& a = tape.activations[l];
    Eigen::Map<MatrixXd>(g.params.data() + p.weight_offset(l), p.widths[l + 1], p.widths[l])
        .noalias() = delta * a.transpose();
    Eigen::Map<VectorXd>(g.params.data() + p.bias_offset(l), p.widths[l + 1]) = delta.rowwise().sum();
    MatrixXd prev = p.weight(l).transpose() * delta;
    if (l > 0) prev = (a.array() > 0.0).select(prev, 0.0);
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

inline MlpGradient backward(const MlpParams& p, const VectorXd& input, const VectorXd& output_grad) {
  MlpTape tape;
  forward(p, MatrixXd(input), &tape);
  return backward(p, tape, MatrixXd(output_grad));
}

/// Position of each tensor inside the flat parameter vector.
struct IndexEntry {
  std::string name;
  Eigen::Index offset;
  int rows;
  int cols;
};

inline std::vector<IndexEntry> index_map(const MlpParams& p) {
  std::vector<IndexEntry> out;
  for (int l = 0; l < p.layer_count(); ++l) {
    out.push_back({"layer" + std::to_string(l) + ".weight", p.weight_offset(l), p.widths[l + 1],
                   p.widths[l]});
    out.push_back({"layer" + std::to_string(l) + ".bias", p.bias_offset(l), p.widths[l + 1], 1});
  }
  return out;
}

struct AdamState {
  VectorXd m;
  VectorXd v;
  std::int64_t step = 0;
  double learning_rate = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t skipped = 0;
};

inline AdamState make_adam(Eigen::Index size, double learning_rate) {
  AdamState s;
  s.m = VectorXd::Zero(size);
  s.v = VectorXd::Zero(size);
  s.learning_rate = learning_rate;
  return s;
}

/// Bias-corrected Adam step. Returns false (and leaves everything but the
/// skip counter untouched) when the gradient has a non-finite entry.
inline bool adam_update(VectorXd& params, const VectorXd& grad, AdamState& s) {
  if (grad.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("adam: parameter, gradient and moment lengths differ");
  }
  if (!grad.allFinite()) {
    ++s.skipped;
    return false;
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.epsilon);
  return true;
}

inline constexpr char kCheckpointMagic[8] = {'I', 'S', 'P', 'M', 'L', 'P', '0', '1'};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ConfigurationError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

}  // namespace detail

/// Binary layout: magic, layer-width count, widths, parameter count, then the
/// parameters as little-endian IEEE-754 doubles. Integers are little-endian u64.
inline void write_checkpoint(std::ostream& os, const MlpParams& p) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_u64(os, p.widths.size());
  for (int w : p.widths) detail::write_u64(os, static_cast<std::uint64_t>(w));
  detail::write_u64(os, static_cast<std::uint64_t>(p.flat.size()));
  for (Eigen::Index k = 0; k < p.flat.size(); ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, &p.flat[k], sizeof bits);
    detail::write_u64(os, bits);
  }
}

inline MlpParams read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ConfigurationError("checkpoint: bad magic header");
  }
  const std::uint64_t depth = detail::read_u64(is);
  if (depth < 2 || depth > 64) throw ConfigurationError("checkpoint: implausible layer count");
  std::vector<int> widths;
  for (std::uint64_t k = 0; k < depth; ++k) {
    const std::uint64_t w = detail::read_u64(is);
    if (w < 1 || w > (1u << 20)) throw ConfigurationError("checkpoint: implausible layer width");
    widths.push_back(static_cast<int>(w));
  }
  MlpParams p = make_mlp(widths);
  if (detail::read_u64(is) != static_cast<std::uint64_t>(p.flat.size())) {
    throw ConfigurationError("checkpoint: parameter count does not match widths");
  }
  for (Eigen::Index k = 0; k < p.flat.size(); ++k) {
    const std::uint64_t bits = detail::read_u64(is);
    std::memcpy(&p.flat[k], &bits, sizeof bits);
  }
  return p;
}

}  // namespace isp
