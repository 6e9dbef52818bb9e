#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <vector>

#include "isp/errors.hpp"

namespace isp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct GpHyperparameters {
  double length_scale = 0.2;
  double noise_ratio = 1e-6;  // noise variance / signal variance
  double max_jitter = 1e-4;   // largest diagonal jitter tried, standardized units
};

inline double matern52(double r, double length_scale) {
  const double s = std::sqrt(5.0) * r / length_scale;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// Exact GP regression with a Matern-5/2 kernel on standardized targets.
/// Inputs are rows of `inputs`.
struct GpModel {
  MatrixXd inputs;
  VectorXd targets;
  GpHyperparameters hyper;
  double target_mean = 0.0;
  double target_scale = 1.0;       // standard deviation used for standardization
  double signal_variance = 1.0;    // standardized units
  double noise_variance = 1e-6;    // standardized units
  double jitter = 0.0;             // extra diagonal added to obtain a factorization
  Eigen::LLT<MatrixXd> chol;
  VectorXd weights;                // (K + noise I)^-1 y_std

  double kernel(const VectorXd& a, const VectorXd& b) const {
    return signal_variance * matern52((a - b).norm(), hyper.length_scale);
  }

  /// Noise variance in original target units.
  double noise_variance_original() const { return noise_variance * target_scale * target_scale; }
};

inline GpModel gp_fit(const MatrixXd& inputs, const VectorXd& targets,
                      const GpHyperparameters& hyper = {}) {
  const Eigen::Index n = inputs.rows();
  if (n < 1) throw ParameterError("gp_fit: need at least one data point");
  if (targets.size() != n) throw ShapeError("gp_fit: inputs and targets differ in length");
  if (!inputs.allFinite() || !targets.allFinite()) throw ParameterError("gp_fit: non-finite data");
  if (!(hyper.length_scale > 0.0)) throw ParameterError("gp_fit: length scale must be > 0");

  GpModel m;
  m.inputs = inputs;
  m.targets = targets;
  m.hyper = hyper;
  m.target_mean = targets.mean();
  const double var = (targets.array() - m.target_mean).square().mean();
  m.target_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  m.signal_variance = 1.0;
  m.noise_variance = hyper.noise_ratio * m.signal_variance;
  const VectorXd y = (targets.array() - m.target_mean) / m.target_scale;

  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = m.kernel(inputs.row(i).transpose(), inputs.row(j).transpose());
    }
  }
  double jitter = 0.0;
  for (;;) {
    MatrixXd a = k;
    a.diagonal().array() += m.noise_variance + jitter;
    m.chol.compute(a);
    if (m.chol.info() == Eigen::Success) break;
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
    if (jitter > hyper.max_jitter * (1.0 + 1e-12)) {
      throw NumericalError("gp_fit: Gram matrix not positive definite after jitter escalation");
    }
  }
  m.jitter = jitter;
  m.weights = m.chol.solve(y);
  return m;
}

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Posterior in standardized target units.
inline GpPrediction gp_predict_standardized(const GpModel& m, const VectorXd& x) {
  if (x.size() != m.inputs.cols()) throw ShapeError("gp_predict: query dimension mismatch");
  VectorXd ks(m.inputs.rows());
  for (Eigen::Index i = 0; i < m.inputs.rows(); ++i) ks[i] = m.kernel(m.inputs.row(i).transpose(), x);
  GpPrediction p;
  p.mean = ks.dot(m.weights);
  const VectorXd v = m.chol.matrixL().solve(ks);
  p.variance = m.signal_variance - v.squaredNorm();
  if (p.variance < 0.0) p.variance = 0.0;
  return p;
}

/// Posterior in original target units.
inline GpPrediction gp_predict(const GpModel& m, const VectorXd& x) {
  const GpPrediction s = gp_predict_standardized(m, x);
  return {m.target_mean + m.target_scale * s.mean, m.target_scale * m.target_scale * s.variance};
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// E[max(best - Y, 0)] for Y ~ N(mean, variance).
inline double expected_improvement(double mean, double variance, double best) {
  const double sd = variance > 0.0 ? std::sqrt(variance) : 0.0;
  const double gain = best - mean;
  if (sd == 0.0) return gain > 0.0 ? gain : 0.0;
  const double z = gain / sd;
  const double ei = gain * normal_cdf(z) + sd * normal_pdf(z);
  return ei > 0.0 ? ei : 0.0;
}

inline double expected_improvement(const GpModel& m, const VectorXd& x, double best) {
  const GpPrediction p = gp_predict(m, x);
  return expected_improvement(p.mean, p.variance, best);
}

}  // namespace isp
