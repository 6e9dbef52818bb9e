#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "isp/env.hpp"
#include "isp/errors.hpp"
#include "isp/gp.hpp"
#include "isp/random.hpp"

namespace isp {

using Eigen::Vector2d;

struct BoConfig {
  int n_initial = 5;
  int n_total = 20;
  int acquisition_starts = 64;
  int refine_iterations = 100;
  double initial_step = 0.1;
  GpHyperparameters gp;

  void validate() const {
    if (n_initial < 1) throw ParameterError("bo: n_initial must be >= 1");
    if (n_initial >= n_total) throw ParameterError("bo: n_initial must be < n_total");
    if (acquisition_starts < 1 || refine_iterations < 0) {
      throw ParameterError("bo: acquisition search sizes must be positive");
    }
  }
};

/// Outcome of one black-box evaluation.
struct Evaluation {
  double objective = 0.0;
  int steps = 0;
  bool converged = true;
  bool diverged = false;
  std::string error;
};

struct BoRecord {
  Vector2d proposed;  // raw point in [0,1]^2
  Vector2d point;     // snapped point actually evaluated
  Evaluation result;
  bool from_acquisition = false;
};

/// Search domain over [0,1]^2 with an optional snapping map. When snapping is
/// discrete, `candidates` lists every reachable snapped point.
struct SearchSpace {
  std::function<Vector2d(const Vector2d&)> snap = [](const Vector2d& u) { return u; };
  std::vector<Vector2d> candidates;
};

/// Latin-hypercube sample of n points in [0,1]^2.
inline std::vector<Vector2d> latin_hypercube(int n, Rng& rng) {
  std::vector<Vector2d> pts(n);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int d = 0; d < 2; ++d) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) pts[i][d] = (perm[i] + jitter(rng)) / n;
  }
  return pts;
}

namespace detail {

/// Compass search from `start`, halving the step after an unsuccessful sweep.
inline std::pair<Vector2d, double> refine(const std::function<double(const Vector2d&)>& f,
                                          Vector2d x, double step, int iterations) {
  double fx = f(x);
  for (int it = 0; it < iterations; ++it) {
    Vector2d best = x;
    double fbest = fx;
    for (int d = 0; d < 2; ++d) {
      for (double sgn : {-1.0, 1.0}) {
        Vector2d y = x;
        y[d] = std::clamp(y[d] + sgn * step, 0.0, 1.0);
        const double fy = f(y);
        if (fy > fbest) {
          fbest = fy;
          best = y;
        }
      }
    }
    if (fbest > fx) {
      x = best;
      fx = fbest;
    } else {
      step *= 0.5;
    }
  }
  return {x, fx};
}

inline bool same_point(const Vector2d& a, const Vector2d& b) { return a == b; }

}  // namespace detail

/// Minimizes `objective` over [0,1]^2: n_initial Latin-hypercube points, then
/// expected-improvement proposals from a GP fitted to the snapped points.
/// Evaluation failures are recorded and do not stop the loop.
inline std::vector<BoRecord> bo_minimize(const std::function<Evaluation(const Vector2d&)>& objective,
                                         const SearchSpace& space, const BoConfig& cfg, Rng& rng,
                                         double failure_objective) {
  cfg.validate();
  std::vector<BoRecord> log;
  auto run = [&](const Vector2d& proposed, bool acq) {
    BoRecord rec;
    rec.proposed = proposed;
    rec.point = space.snap(proposed);
    rec.from_acquisition = acq;
    try {
      rec.result = objective(rec.point);
    } catch (const std::exception& e) {
      rec.result = Evaluation{};
      rec.result.objective = failure_objective;
      rec.result.converged = false;
      rec.result.error = e.what();
    }
    log.push_back(std::move(rec));
  };
  auto evaluated = [&](const Vector2d& p) {
    return std::any_of(log.begin(), log.end(),
                       [&](const BoRecord& r) { return detail::same_point(r.point, p); });
  };

  for (const Vector2d& u : latin_hypercube(cfg.n_initial, rng)) run(u, false);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(log.size()) < cfg.n_total) {
    MatrixXd x(static_cast<Eigen::Index>(log.size()), 2);
    VectorXd y(static_cast<Eigen::Index>(log.size()));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < log.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = log[i].point.transpose();
      y[static_cast<Eigen::Index>(i)] = log[i].result.objective;
      best = std::min(best, log[i].result.objective);
    }
    const GpModel gp = gp_fit(x, y, cfg.gp);
    const std::function<double(const Vector2d&)> ei = [&](const Vector2d& q) {
      return expected_improvement(gp, q, best);
    };

    std::vector<std::pair<double, Vector2d>> ends;
    for (int s = 0; s < cfg.acquisition_starts; ++s) {
      const Vector2d start(unit(rng), unit(rng));
      auto [xq, fq] = detail::refine(ei, start, cfg.initial_step, cfg.refine_iterations);
      ends.emplace_back(fq, xq);
    }
    std::stable_sort(ends.begin(), ends.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    std::optional<Vector2d> next;
    for (const auto& [f, q] : ends) {
      if (!evaluated(space.snap(q))) {
        next = q;
        break;
      }
    }
    if (!next && !space.candidates.empty()) {
      double best_ei = -1.0;
      for (const Vector2d& c : space.candidates) {
        if (evaluated(c)) continue;
        const double v = ei(c);
        if (v > best_ei) {
          best_ei = v;
          next = c;
        }
      }
    }
    if (!next) {
      if (!space.candidates.empty()) break;  // every candidate already evaluated
      next = ends.front().second;
    }
    run(*next, true);
  }
  return log;
}

inline std::size_t best_index(const std::vector<BoRecord>& log) {
  if (log.empty()) throw ParameterError("bo: empty evaluation log");
  std::size_t k = 0;
  for (std::size_t i = 1; i < log.size(); ++i) {
    if (log[i].result.objective < log[k].result.objective) k = i;
  }
  return k;
}

struct PlanConfig {
  int n_initial = 5;
  int n_total = 20;
  double early_stop_reward = 10.0;
  int rollout_cap = 100;

  void validate() const {
    if (n_initial < 1 || n_initial >= n_total) {
      throw ParameterError("plan: need 1 <= n_initial < n_total");
    }
    if (rollout_cap < 1) throw ParameterError("plan: rollout_cap must be >= 1");
  }
};

using PolicyFn = std::function<VectorXd(const IspEnv&, const Observation&)>;

/// Node indices addressed by (u_L, u_R).
inline std::pair<NodeIndex, NodeIndex> grasp_pair(const TissueMesh& mesh, const Vector2d& u) {
  return {candidate_at(mesh, Side::left, u[0]), candidate_at(mesh, Side::right, u[1])};
}

inline Vector2d snap_parameters(const TissueMesh& mesh, const Vector2d& u) {
  const auto [l, r] = grasp_pair(mesh, u);
  return {candidate_parameter(mesh, Side::left, l), candidate_parameter(mesh, Side::right, r)};
}

inline SearchSpace grasp_search_space(const TissueMesh& mesh) {
  SearchSpace s;
  s.snap = [&mesh](const Vector2d& u) { return snap_parameters(mesh, u); };
  for (NodeIndex l : mesh.left_candidates) {
    for (NodeIndex r : mesh.right_candidates) {
      s.candidates.emplace_back(candidate_parameter(mesh, Side::left, l),
                                candidate_parameter(mesh, Side::right, r));
    }
  }
  return s;
}

inline double divergence_sentinel(const TissueMesh& mesh) { return 10.0 * mesh.side_length; }

/// Rolls out `policy` from the grasp pair addressed by `u` and returns the
/// stacked grasp displacement norm (mm).
inline Evaluation evaluate_objective(const Vector2d& u, const EpisodeSpec& spec_template,
                                     const PolicyFn& policy, IspEnv& env, const PlanConfig& cfg) {
  const auto [l, r] = grasp_pair(env.mesh(), u);
  EpisodeSpec spec = spec_template;
  spec.grasp_nodes = {l, r};
  Rng unused(0);
  Observation obs = env.reset(unused, &spec);
  Evaluation out;
  out.converged = false;
  for (int t = 0; t < cfg.rollout_cap; ++t) {
    StepResult res = env.step(policy(env, obs));
    ++out.steps;
    if (res.diverged) {
      out.diverged = true;
      out.objective = divergence_sentinel(env.mesh());
      return out;
    }
    obs = std::move(res.observation);
    if (res.reward > cfg.early_stop_reward) {
      out.converged = true;
      break;
    }
    if (res.done) break;
  }
  const auto q = env.grasp_positions();
  const auto& q0 = env.initial_grasp_positions();
  double s = 0.0;
  for (std::size_t g = 0; g < q.size(); ++g) s += (q[g] - q0[g]).squaredNorm();
  out.objective = std::sqrt(s);
  return out;
}

struct PlanResult {
  Vector2d best_parameters = Vector2d::Zero();
  std::pair<NodeIndex, NodeIndex> best_grasp_nodes{0, 0};
  double best_objective = 0.0;
  std::vector<BoRecord> evaluation_log;
  double wall_time = 0.0;  // seconds
};

/// Preoperative grasp planning: BO over the two edge parameters with policy
/// rollouts as the objective.
inline PlanResult plan(const EpisodeSpec& spec_template, const PolicyFn& policy, IspEnv& env,
                       const PlanConfig& cfg, std::uint64_t seed, const BoConfig& bo_extra = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  BoConfig bo = bo_extra;
  bo.n_initial = cfg.n_initial;
  bo.n_total = cfg.n_total;
  Rng rng(derive_seed(seed, 17));
  const SearchSpace space = grasp_search_space(env.mesh());
  auto log = bo_minimize(
      [&](const Vector2d& u) { return evaluate_objective(u, spec_template, policy, env, cfg); },
      space, bo, rng, divergence_sentinel(env.mesh()));
  PlanResult out;
  const std::size_t k = best_index(log);
  out.best_parameters = log[k].point;
  out.best_grasp_nodes = grasp_pair(env.mesh(), log[k].point);
  out.best_objective = log[k].result.objective;
  out.evaluation_log = std::move(log);
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace isp
