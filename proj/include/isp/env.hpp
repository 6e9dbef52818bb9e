#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isp/errors.hpp"
#include "isp/fem.hpp"
#include "isp/mesh.hpp"
#include "isp/random.hpp"

namespace isp {

struct EnvConfig {
  int n_controlled = 2;
  int n_grasped = 2;
  int dimension = 2;
  int episode_length = 100;
  double max_action_per_axis = 0.2;  // mm
  double reward_scale_lambda = 12.0;
  double young_min = 0.6;            // MPa
  double young_max = 1.2;            // MPa
  double poisson_fixed = 0.49;
  double desired_distance = 4.0;     // mm
  double min_desired_separation = 2.0;  // mm
  int augmentation_k = 5;
  /// Planning mode: end the episode as soon as a step reward exceeds this.
  std::optional<double> early_stop_reward;

  int action_dim() const { return n_grasped * dimension; }
  int error_dim() const { return n_controlled * dimension; }
  int observation_dim() const { return error_dim() + (augmentation_k - 1) * action_dim(); }

  void validate() const {
    if (n_controlled < 1 || n_grasped < 1 || dimension < 1) {
      throw ParameterError("env: n_controlled, n_grasped and dimension must be >= 1");
    }
    if (dimension != 2) throw ParameterError("env: only planar (dimension = 2) tissue is simulated");
    if (episode_length < 1) throw ParameterError("env: episode_length must be >= 1");
    if (!(max_action_per_axis > 0.0)) throw ParameterError("env: max_action_per_axis must be > 0");
    if (augmentation_k < 1) throw ParameterError("env: augmentation_k must be >= 1");
    if (!(young_min > 0.0 && young_max >= young_min)) {
      throw ParameterError("env: young range must be non-empty and positive");
    }
    if (!(poisson_fixed > 0.0 && poisson_fixed < 0.5)) {
      throw ParameterError("env: poisson_fixed must lie in (0, 0.5)");
    }
    if (!(desired_distance > 0.0)) throw ParameterError("env: desired_distance must be > 0");
    if (!(min_desired_separation >= 0.0)) {
      throw ParameterError("env: min_desired_separation must be >= 0");
    }
  }
};

/// Which nodes are controlled and grasped in an episode, and where the
/// controlled nodes should go.
struct EpisodeSpec {
  std::vector<NodeIndex> controlled_nodes;
  std::vector<Vec2> desired_positions;
  std::vector<NodeIndex> grasp_nodes;
  double young_modulus_drawn = 0.9;
};

/// Checks a spec against the mesh. Controlled nodes must be distinct free
/// nodes, grasp nodes distinct edge candidates, and every desired point must
/// lie strictly inside the sheet at distinct locations from the start points.
inline void validate_spec(const EpisodeSpec& spec, const TissueMesh& mesh, const EnvConfig& cfg) {
  if (static_cast<int>(spec.controlled_nodes.size()) != cfg.n_controlled ||
      static_cast<int>(spec.desired_positions.size()) != cfg.n_controlled) {
    throw ConfigurationError("episode spec: expected " + std::to_string(cfg.n_controlled) +
                             " controlled points");
  }
  if (static_cast<int>(spec.grasp_nodes.size()) != cfg.n_grasped) {
    throw ConfigurationError("episode spec: expected " + std::to_string(cfg.n_grasped) +
                             " grasp points");
  }
  if (!(spec.young_modulus_drawn > 0.0)) throw ConfigurationError("episode spec: bad modulus");
  auto in_range = [&](NodeIndex n) {
    return n >= 0 && static_cast<std::size_t>(n) < mesh.node_count();
  };
  std::vector<NodeIndex> all;
  for (NodeIndex n : spec.controlled_nodes) {
    if (!in_range(n) || mesh.is_fixed(n)) {
      throw ConfigurationError("episode spec: controlled node must be a free mesh node");
    }
    all.push_back(n);
  }
  for (NodeIndex n : spec.grasp_nodes) {
    const bool candidate =
        std::find(mesh.left_candidates.begin(), mesh.left_candidates.end(), n) !=
            mesh.left_candidates.end() ||
        std::find(mesh.right_candidates.begin(), mesh.right_candidates.end(), n) !=
            mesh.right_candidates.end();
    if (!in_range(n) || !candidate) {
      throw ConfigurationError("episode spec: grasp node " + std::to_string(n) +
                               " is not a grasp candidate");
    }
    all.push_back(n);
  }
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw ConfigurationError("episode spec: controlled and grasp nodes must be distinct");
  }
  double p0_err2 = 0.0;
  for (std::size_t i = 0; i < spec.desired_positions.size(); ++i) {
    const Vec2& d = spec.desired_positions[i];
    if (!d.allFinite() || d.x() <= 0.0 || d.y() <= 0.0 || d.x() >= mesh.side_length ||
        d.y() >= mesh.side_length) {
      throw OutOfDomainError("episode spec: desired position outside the tissue");
    }
    p0_err2 += (d - mesh.node_positions[spec.controlled_nodes[i]]).squaredNorm();
  }
  if (p0_err2 == 0.0) throw DegenerateEpisode("episode spec: desired positions equal the start");
}

/// RL observation: the controlled-point error, optionally followed by the K-1
/// most recent actions (most recent first).
struct Observation {
  VectorXd error_vector;
  VectorXd action_history;

  Eigen::Index size() const { return error_vector.size() + action_history.size(); }

  VectorXd flat() const {
    VectorXd out(size());
    out << error_vector, action_history;
    return out;
  }
};

/// Concatenates the error with the stored past actions. With an empty
/// history (K = 1) this is the error vector itself.
inline Observation augment(const VectorXd& error_vector, const std::deque<VectorXd>& history) {
  Observation obs;
  obs.error_vector = error_vector;
  Eigen::Index len = 0;
  for (const auto& a : history) len += a.size();
  obs.action_history.resize(len);
  Eigen::Index off = 0;
  for (const auto& a : history) {
    obs.action_history.segment(off, a.size()) = a;
    off += a.size();
  }
  return obs;
}

/// lambda * (1 - sqrt(|p_t - p_des| / |p_0 - p_des|)) over the stacked vectors.
inline double reward(std::span<const Vec2> p_t, std::span<const Vec2> p_0,
                     std::span<const Vec2> p_des, double lambda) {
  if (p_t.size() != p_des.size() || p_0.size() != p_des.size()) {
    throw ShapeError("reward: point lists differ in length");
  }
  double now = 0.0, start = 0.0;
  for (std::size_t i = 0; i < p_des.size(); ++i) {
    now += (p_t[i] - p_des[i]).squaredNorm();
    start += (p_0[i] - p_des[i]).squaredNorm();
  }
  if (start == 0.0) throw DegenerateEpisode("reward: initial error is zero");
  return lambda * (1.0 - std::sqrt(std::sqrt(now) / std::sqrt(start)));
}

/// Solver diagnostics aggregated over the substeps of one control step.
struct SolverSummary {
  bool converged = true;
  int substeps = 0;
  int total_cg_iterations = 0;
  int max_cg_iterations = 0;
  double max_residual = 0.0;
  int inverted_elements = 0;

  void add(const StepReport& r) {
    converged = converged && r.converged;
    ++substeps;
    total_cg_iterations += r.cg_iterations_used;
    max_cg_iterations = std::max(max_cg_iterations, r.cg_iterations_used);
    max_residual = std::max(max_residual, r.residual);
    inverted_elements = std::max(inverted_elements, r.inverted_elements);
  }
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  /// True when the episode ended for a reason other than the time limit
  /// (divergence); bootstrapping must stop here.
  bool terminated = false;
  bool diverged = false;
  bool early_stopped = false;
  SolverSummary solver;
};

/// Episodic indirect-positioning environment over one simulated sheet.
/// Single-threaded; owns its simulation state.
class IspEnv {
public:
  IspEnv(std::shared_ptr<const TissueMesh> mesh, MaterialParams material, SolverConfig solver,
         EnvConfig config)
      : mesh_(std::move(mesh)), solver_(solver), config_(std::move(config)),
        model_(mesh_, with_poisson(material, config_.poisson_fixed)) {
    solver_.validate();
    config_.validate();
  }

  const EnvConfig& config() const { return config_; }
  const SolverConfig& solver_config() const { return solver_; }
  const TissueMesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const TissueMesh>& mesh_ptr() const { return mesh_; }
  const ElasticModel& model() const { return model_; }
  const SimState& state() const { return state_; }
  const EpisodeSpec& spec() const { return spec_; }
  int step_index() const { return step_; }
  int observation_dim() const { return config_.observation_dim(); }
  int action_dim() const { return config_.action_dim(); }

  /// Draws a random episode spec. Throws ResetFailure when the desired-point
  /// resampling budget runs out.
  EpisodeSpec sample_spec(Rng& rng) const {
    const auto& m = *mesh_;
    EpisodeSpec spec;
    std::uniform_real_distribution<double> young(config_.young_min, config_.young_max);
    spec.young_modulus_drawn = config_.young_min == config_.young_max ? config_.young_min
                                                                      : young(rng);

    if (static_cast<std::size_t>(config_.n_controlled) > m.interior_nodes.size()) {
      throw ConfigurationError("env: more controlled points than interior nodes");
    }
    spec.controlled_nodes = draw_without_replacement(m.interior_nodes, config_.n_controlled, rng);
    // Left-to-right order so point i tends to sit nearer grasp i.
    std::sort(spec.controlled_nodes.begin(), spec.controlled_nodes.end(),
              [&](NodeIndex a, NodeIndex b) {
                const double xa = m.node_positions[a].x(), xb = m.node_positions[b].x();
                return xa != xb ? xa < xb : a < b;
              });

    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    bool ok = false;
    for (int attempt = 0; attempt < kMaxResampleAttempts && !ok; ++attempt) {
      spec.desired_positions.clear();
      for (NodeIndex n : spec.controlled_nodes) {
        const double a = angle(rng);
        spec.desired_positions.push_back(m.node_positions[n] +
                                         config_.desired_distance * Vec2(std::cos(a), std::sin(a)));
      }
      ok = desired_points_valid(spec.desired_positions);
    }
    if (!ok) throw ResetFailure("env: could not place desired points after resampling");

    std::vector<NodeIndex> left = m.left_candidates, right = m.right_candidates;
    for (int g = 0; g < config_.n_grasped; ++g) {
      auto& pool = (g % 2 == 0) ? left : right;
      if (pool.empty()) throw ConfigurationError("env: not enough grasp candidates");
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t k = pick(rng);
      spec.grasp_nodes.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return spec;
  }

  /// Starts an episode, either from a freshly drawn spec or from `fixed_spec`.
  Observation reset(Rng& rng, const EpisodeSpec* fixed_spec = nullptr) {
    if (fixed_spec != nullptr) {
      validate_spec(*fixed_spec, *mesh_, config_);
      spec_ = *fixed_spec;
    } else {
      spec_ = sample_spec(rng);
    }
    model_.set_young_modulus(spec_.young_modulus_drawn);
    state_ = make_rest_state(*mesh_);
    for (NodeIndex g : spec_.grasp_nodes) state_.grasp_targets[g] = state_.position(g);
    check_grasp_targets(state_, *mesh_);
    initial_controlled_ = controlled_positions();
    initial_grasp_ = grasp_positions();
    history_.assign(static_cast<std::size_t>(config_.augmentation_k - 1),
                    VectorXd::Zero(config_.action_dim()));
    step_ = 0;
    done_ = false;
    return observe();
  }

  StepResult step(const VectorXd& action) {
    if (done_) throw ConfigurationError("env: step called on a finished episode");
    if (action.size() != config_.action_dim()) {
      throw ShapeError("env: action has " + std::to_string(action.size()) + " entries, expected " +
                       std::to_string(config_.action_dim()));
    }
    const double lim = config_.max_action_per_axis;
    VectorXd applied = action.unaryExpr([lim](double a) {
      return std::isfinite(a) ? std::clamp(a, -lim, lim) : 0.0;
    });
    for (int g = 0; g < config_.n_grasped; ++g) {
      state_.grasp_targets[spec_.grasp_nodes[g]] += applied.segment<2>(2 * g);
    }

    StepResult out;
    try {
      for (int k = 0; k < solver_.substeps_per_control; ++k) {
        auto [next, report] = isp::step(state_, model_, solver_);
        state_ = std::move(next);
        out.solver.add(report);
      }
    } catch (const SimulationDiverged& e) {
      state_ = e.last_state();
      out.diverged = true;
    }

    ++step_;
    if (!history_.empty()) {
      history_.push_front(applied);
      history_.pop_back();
    }
    out.observation = observe();
    if (out.diverged) {
      out.reward = -config_.reward_scale_lambda;
      out.done = true;
      out.terminated = true;
    } else {
      out.reward = current_reward();
      out.early_stopped = config_.early_stop_reward && out.reward > *config_.early_stop_reward;
      out.done = out.early_stopped || step_ >= config_.episode_length;
    }
    done_ = out.done;
    return out;
  }

  std::vector<Vec2> controlled_positions() const {
    std::vector<Vec2> p;
    for (NodeIndex n : spec_.controlled_nodes) p.push_back(state_.position(n));
    return p;
  }

  std::vector<Vec2> grasp_positions() const {
    std::vector<Vec2> q;
    for (NodeIndex n : spec_.grasp_nodes) q.push_back(state_.position(n));
    return q;
  }

  const std::vector<Vec2>& initial_controlled_positions() const { return initial_controlled_; }
  const std::vector<Vec2>& initial_grasp_positions() const { return initial_grasp_; }

  double current_reward() const {
    const auto p = controlled_positions();
    return reward(p, initial_controlled_, spec_.desired_positions, config_.reward_scale_lambda);
  }

  /// Euclidean norm of the stacked controlled-point error (mm).
  double error_norm() const { return error_vector().norm(); }

  VectorXd error_vector() const {
    VectorXd e(config_.error_dim());
    for (int i = 0; i < config_.n_controlled; ++i) {
      e.segment<2>(2 * i) = state_.position(spec_.controlled_nodes[i]) - spec_.desired_positions[i];
    }
    return e;
  }

private:
  static constexpr int kMaxResampleAttempts = 100;

  static MaterialParams with_poisson(MaterialParams m, double nu) {
    m.poisson_ratio = nu;
    return m;
  }

  static std::vector<NodeIndex> draw_without_replacement(std::vector<NodeIndex> pool, int count,
                                                         Rng& rng) {
    std::vector<NodeIndex> out;
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t k = pick(rng);
      out.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
  }

  bool desired_points_valid(const std::vector<Vec2>& pts) const {
    const double side = mesh_->side_length;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].x() <= 0.0 || pts[i].y() <= 0.0 || pts[i].x() >= side || pts[i].y() >= side) {
        return false;
      }
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        if ((pts[i] - pts[j]).norm() < config_.min_desired_separation) return false;
      }
    }
    return true;
  }

  Observation observe() const { return augment(error_vector(), history_); }

  std::shared_ptr<const TissueMesh> mesh_;
  SolverConfig solver_;
  EnvConfig config_;
  ElasticModel model_;
  SimState state_;
  EpisodeSpec spec_;
  std::vector<Vec2> initial_controlled_;
  std::vector<Vec2> initial_grasp_;
  std::deque<VectorXd> history_;
  int step_ = 0;
  bool done_ = true;
};

/// CSV trace of an episode: one row per control step.
class TraceWriter {
public:
  TraceWriter(std::ostream& os, int n_controlled, int n_grasped) : os_(os) {
    os_ << "step,reward,error_norm_mm";
    for (int i = 0; i < n_controlled; ++i) os_ << ",err" << i << "_x,err" << i << "_y";
    for (int g = 0; g < n_grasped; ++g) os_ << ",grasp" << g << "_x,grasp" << g << "_y";
    os_ << ",cg_converged,cg_iterations\n";
    os_.precision(10);
  }

  void row(int step, double reward, const IspEnv& env, const SolverSummary& solver) {
    const VectorXd e = env.error_vector();
    os_ << step << ',' << reward << ',' << e.norm();
    for (Eigen::Index k = 0; k < e.size(); ++k) os_ << ',' << e[k];
    for (const Vec2& q : env.grasp_positions()) os_ << ',' << q.x() << ',' << q.y();
    os_ << ',' << (solver.converged ? 1 : 0) << ',' << solver.total_cg_iterations << '\n';
  }

private:
  std::ostream& os_;
};

}  // namespace isp
