#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <span>
#include <vector>

#include "isp/env.hpp"
#include "isp/errors.hpp"

namespace isp {

struct ExpertConfig {
  double step_gain = 1.0;

  void validate() const {
    if (!(step_gain > 0.0 && step_gain <= 1.0)) {
      throw ParameterError("expert: step_gain must lie in (0, 1]");
    }
  }
};

/// Hand-crafted controller: every grasp point moves along the direction from
/// its nearest controlled point toward that point's desired location.
///
/// The step length is step_gain * min(max_action, remaining error), so the
/// grasp slows down proportionally near the goal. The returned vector is laid
/// out as (dx_0, dy_0, dx_1, dy_1, ...) over grasp points.
inline VectorXd expert_action(std::span<const Vec2> controlled, std::span<const Vec2> desired,
                              std::span<const Vec2> grasps, double max_action,
                              const ExpertConfig& cfg = {}) {
  if (controlled.size() != desired.size() || controlled.empty()) {
    throw ShapeError("expert_action: controlled and desired lists must match and be non-empty");
  }
  VectorXd action = VectorXd::Zero(2 * static_cast<Eigen::Index>(grasps.size()));
  for (std::size_t g = 0; g < grasps.size(); ++g) {
    std::size_t nearest = 0;
    double best = (controlled[0] - grasps[g]).squaredNorm();
    for (std::size_t i = 1; i < controlled.size(); ++i) {
      const double d = (controlled[i] - grasps[g]).squaredNorm();
      if (d < best) {
        best = d;
        nearest = i;
      }
    }
    const Vec2 dir = desired[nearest] - controlled[nearest];
    const double err = dir.norm();
    if (err == 0.0) continue;
    const double magnitude = cfg.step_gain * std::min(max_action, err);
    action.segment<2>(2 * static_cast<Eigen::Index>(g)) = dir / err * magnitude;
  }
  return action;
}

inline VectorXd expert_action(const IspEnv& env, const ExpertConfig& cfg = {}) {
  const auto p = env.controlled_positions();
  const auto q = env.grasp_positions();
  return expert_action(p, env.spec().desired_positions, q, env.config().max_action_per_axis, cfg);
}

}  // namespace isp
