#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>

#include "isp/env.hpp"
#include "isp/errors.hpp"
#include "isp/random.hpp"

namespace isp {

struct PointMassConfig {
  double max_action = 0.2;
  double start_min = 0.5;  // |initial error| drawn from [start_min, start_max]
  double start_max = 1.0;
  int episode_length = 20;
  double lambda = 1.0;

  void validate() const {
    if (!(max_action > 0.0)) throw ParameterError("point mass: max_action must be > 0");
    if (!(start_min > 0.0 && start_max >= start_min)) {
      throw ParameterError("point mass: start range must be positive and non-empty");
    }
    if (episode_length < 1) throw ParameterError("point mass: episode_length must be >= 1");
  }
};

/// One-dimensional point that moves by the (clamped) action each step.
/// Observation is the signed error to the origin; the reward has the same
/// square-root error-ratio form as the tissue task.
class PointMassEnv {
public:
  explicit PointMassEnv(PointMassConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  int observation_dim() const { return 1; }
  int action_dim() const { return 1; }
  const PointMassConfig& config() const { return cfg_; }
  double position() const { return x_; }
  double error_norm() const { return std::abs(x_); }

  Observation reset(Rng& rng) {
    std::uniform_real_distribution<double> mag(cfg_.start_min, cfg_.start_max);
    std::bernoulli_distribution sign(0.5);
    const double m = mag(rng);
    return reset_to(sign(rng) ? m : -m);
  }

  Observation reset_to(double x0) {
    if (x0 == 0.0) throw DegenerateEpisode("point mass: zero initial error");
    x0_ = x_ = x0;
    step_ = 0;
    return observe();
  }

  StepResult step(const VectorXd& action) {
    if (action.size() != 1) throw ShapeError("point mass: action must have one entry");
    const double a = std::isfinite(action[0])
                         ? std::clamp(action[0], -cfg_.max_action, cfg_.max_action)
                         : 0.0;
    x_ += a;
    ++step_;
    StepResult r;
    r.observation = observe();
    r.reward = cfg_.lambda * (1.0 - std::sqrt(std::abs(x_) / std::abs(x0_)));
    r.done = step_ >= cfg_.episode_length;
    return r;
  }

  /// Best achievable return from x0: move at full speed, then hold at zero.
  double optimal_return(double x0) const {
    double x = x0, ret = 0.0;
    for (int t = 0; t < cfg_.episode_length; ++t) {
      x -= std::clamp(x, -cfg_.max_action, cfg_.max_action);
      ret += cfg_.lambda * (1.0 - std::sqrt(std::abs(x) / std::abs(x0)));
    }
    return ret;
  }

private:
  Observation observe() const {
    Observation o;
    o.error_vector = VectorXd::Constant(1, x_);
    o.action_history = VectorXd(0);
    return o;
  }

  PointMassConfig cfg_;
  double x0_ = 1.0;
  double x_ = 1.0;
  int step_ = 0;
};

}  // namespace isp
