#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "isp/env.hpp"
#include "isp/errors.hpp"
#include "isp/mlp.hpp"
#include "isp/random.hpp"

namespace isp {

struct SacConfig {
  double gamma = 0.99;
  double polyak_tau = 0.005;
  double learning_rate = 7e-4;
  int batch_size = 256;
  int buffer_capacity = 5000;
  int total_steps = 20000;
  int warmup_steps = 5000;
  std::optional<double> target_entropy;  // defaults to -action_dim
  int eval_interval = 100;
  int eval_episodes = 5;
  bool auto_temperature = true;
  double initial_alpha = 1.0;
  int hidden_width = 256;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("sac: gamma must lie in (0, 1)");
    if (!(polyak_tau > 0.0 && polyak_tau <= 1.0)) {
      throw ParameterError("sac: polyak_tau must lie in (0, 1]");
    }
    if (!(learning_rate > 0.0)) throw ParameterError("sac: learning_rate must be > 0");
    if (batch_size < 1) throw ParameterError("sac: batch_size must be >= 1");
    if (buffer_capacity < batch_size) throw ParameterError("sac: buffer_capacity < batch_size");
    if (warmup_steps < 0 || warmup_steps > buffer_capacity) {
      throw ParameterError("sac: warmup_steps must lie in [0, buffer_capacity]");
    }
    if (total_steps < 1) throw ParameterError("sac: total_steps must be >= 1");
    if (eval_interval < 1 || eval_episodes < 1) {
      throw ParameterError("sac: eval_interval and eval_episodes must be >= 1");
    }
    if (!(initial_alpha > 0.0)) throw ParameterError("sac: initial_alpha must be > 0");
    if (hidden_width < 1) throw ParameterError("sac: hidden_width must be >= 1");
  }
};

/// Sizes and fixed input scaling shared by the actor and critics.
struct AgentDims {
  int observation_dim = 0;
  int action_dim = 0;
  double action_scale = 1.0;
  VectorXd observation_scale;  // elementwise multiplier applied before the networks
};

/// Error entries are scaled by 1/desired_distance, history entries by 1/max_action.
inline AgentDims agent_dims(const EnvConfig& cfg) {
  AgentDims d;
  d.observation_dim = cfg.observation_dim();
  d.action_dim = cfg.action_dim();
  d.action_scale = cfg.max_action_per_axis;
  d.observation_scale = VectorXd::Constant(d.observation_dim, 1.0 / cfg.max_action_per_axis);
  d.observation_scale.head(cfg.error_dim()).setConstant(1.0 / cfg.desired_distance);
  return d;
}

struct Transition {
  VectorXd observation;
  VectorXd action;  // unit-scaled, in [-1, 1]
  double reward = 0.0;
  VectorXd next_observation;
  bool done = false;  // true only when bootstrapping must stop
};

struct Batch {
  MatrixXd observations;
  MatrixXd actions;
  VectorXd rewards;
  MatrixXd next_observations;
  VectorXd dones;

  Eigen::Index size() const { return rewards.size(); }
};

class ReplayBuffer {
public:
  ReplayBuffer(int capacity, int observation_dim, int action_dim)
      : obs_(observation_dim, capacity), act_(action_dim, capacity), rew_(capacity),
        next_(observation_dim, capacity), done_(capacity), capacity_(capacity) {
    if (capacity < 1) throw ParameterError("replay buffer: capacity must be >= 1");
  }

  int capacity() const { return capacity_; }
  int size() const { return size_; }

  void add(const Transition& t) {
    if (t.observation.size() != obs_.rows() || t.next_observation.size() != obs_.rows() ||
        t.action.size() != act_.rows()) {
      throw ShapeError("replay buffer: transition widths do not match the buffer");
    }
    obs_.col(cursor_) = t.observation;
    act_.col(cursor_) = t.action;
    rew_[cursor_] = t.reward;
    next_.col(cursor_) = t.next_observation;
    done_[cursor_] = t.done ? 1.0 : 0.0;
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  Transition at(int k) const {
    if (k < 0 || k >= size_) throw ParameterError("replay buffer: index out of range");
    return {obs_.col(k), act_.col(k), rew_[k], next_.col(k), done_[k] != 0.0};
  }

  /// Uniform sampling with replacement over the current contents.
  Batch sample(int batch_size, Rng& rng) const {
    if (size_ == 0) throw ConfigurationError("replay buffer: sampling from an empty buffer");
    std::uniform_int_distribution<int> pick(0, size_ - 1);
    Batch b;
    b.observations.resize(obs_.rows(), batch_size);
    b.actions.resize(act_.rows(), batch_size);
    b.rewards.resize(batch_size);
    b.next_observations.resize(obs_.rows(), batch_size);
    b.dones.resize(batch_size);
    for (int j = 0; j < batch_size; ++j) {
      const int k = pick(rng);
      b.observations.col(j) = obs_.col(k);
      b.actions.col(j) = act_.col(k);
      b.rewards[j] = rew_[k];
      b.next_observations.col(j) = next_.col(k);
      b.dones[j] = done_[k];
    }
    return b;
  }

private:
  MatrixXd obs_, act_;
  VectorXd rew_;
  MatrixXd next_;
  VectorXd done_;
  int capacity_;
  int cursor_ = 0;
  int size_ = 0;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Squashed-Gaussian actor. The network emits per-axis mean and log-std.
struct Policy {
  MlpParams actor;
  double action_scale = 1.0;
  VectorXd observation_scale;

  int action_dim() const { return actor.output_width() / 2; }
  int observation_dim() const { return actor.input_width(); }

  MatrixXd normalize(const MatrixXd& obs) const {
    if (obs.rows() != observation_scale.size()) {
      throw ShapeError("policy: observation width " + std::to_string(obs.rows()) + ", expected " +
                       std::to_string(observation_scale.size()));
    }
    return observation_scale.asDiagonal() * obs;
  }
};

inline Policy make_policy(const AgentDims& d, int hidden, Rng& rng) {
  Policy p;
  p.actor = make_mlp({d.observation_dim, hidden, hidden, 2 * d.action_dim}, rng);
  p.action_scale = d.action_scale;
  p.observation_scale = d.observation_scale.size() == d.observation_dim
                            ? d.observation_scale
                            : VectorXd::Ones(d.observation_dim);
  return p;
}

namespace detail {

inline double softplus(double y) { return std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))); }

/// log(1 - tanh(x)^2), evaluated without cancellation.
inline double log1m_tanh2(double x) {
  return 2.0 * (std::numbers::ln2 - x - softplus(-2.0 * x));
}

}  // namespace detail

/// Batched reparametrized actor evaluation on normalized observations.
struct ActorPass {
  MlpTape tape;
  MatrixXd mean;
  MatrixXd log_std;  // clamped
  MatrixXd std;
  MatrixXd noise;
  MatrixXd pre_tanh;
  MatrixXd unit_action;  // tanh(pre_tanh), in [-1, 1]
  VectorXd log_prob;     // density of unit_action
  Eigen::ArrayXXd log_std_active;  // 1 where the clamp is inactive
};

inline ActorPass actor_pass(const Policy& policy, const MatrixXd& normalized_obs,
                            const MatrixXd& noise) {
  const int a = policy.action_dim();
  const Eigen::Index b = normalized_obs.cols();
  if (noise.rows() != a || noise.cols() != b) throw ShapeError("actor: noise shape mismatch");
  ActorPass out;
  const MatrixXd head = forward(policy.actor, normalized_obs, &out.tape);
  out.mean = head.topRows(a);
  const MatrixXd raw_log_std = head.bottomRows(a);
  out.log_std = raw_log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  out.log_std_active =
      (raw_log_std.array() >= kLogStdMin && raw_log_std.array() <= kLogStdMax).cast<double>();
  out.std = out.log_std.array().exp().matrix();
  out.noise = noise;
  out.pre_tanh = out.mean + out.std.cwiseProduct(noise);
  out.unit_action = out.pre_tanh.array().tanh().matrix();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  out.log_prob.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    double lp = 0.0;
    for (int i = 0; i < a; ++i) {
      lp += -0.5 * noise(i, j) * noise(i, j) - out.log_std(i, j) - half_log_2pi -
            detail::log1m_tanh2(out.pre_tanh(i, j));
    }
    out.log_prob[j] = lp;
  }
  return out;
}

inline MatrixXd standard_normal(int rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n01(rng);
  return m;
}

struct ActionSample {
  VectorXd action;  // scaled to +/- action_scale
  double log_prob = 0.0;
};

/// Deterministic mode returns the squashed mean; log_prob is then the density
/// at zero noise.
inline ActionSample sample_action(const Policy& policy, const VectorXd& observation, Rng& rng,
                                  bool deterministic) {
  const int a = policy.action_dim();
  const MatrixXd noise = deterministic ? MatrixXd::Zero(a, 1) : standard_normal(a, 1, rng);
  const ActorPass pass = actor_pass(policy, policy.normalize(MatrixXd(observation)), noise);
  return {policy.action_scale * pass.unit_action.col(0), pass.log_prob[0]};
}

/// Twin critics over [normalized observation; unit action] with target copies.
struct Critics {
  MlpParams q1, q2;
  MlpParams target1, target2;
};

inline Critics make_critics(const AgentDims& d, int hidden, Rng& rng) {
  Critics c;
  c.q1 = make_mlp({d.observation_dim + d.action_dim, hidden, hidden, 1}, rng);
  c.q2 = make_mlp({d.observation_dim + d.action_dim, hidden, hidden, 1}, rng);
  c.target1 = c.q1;
  c.target2 = c.q2;
  return c;
}

inline MatrixXd critic_input(const MatrixXd& normalized_obs, const MatrixXd& unit_action) {
  MatrixXd x(normalized_obs.rows() + unit_action.rows(), normalized_obs.cols());
  x << normalized_obs, unit_action;
  return x;
}

inline void polyak_update(MlpParams& target, const MlpParams& source, double tau) {
  target.flat = (1.0 - tau) * target.flat + tau * source.flat;
}

/// r + gamma (1 - done) value.
inline double td_target(double reward, bool done, double next_value, double gamma) {
  return reward + (done ? 0.0 : gamma * next_value);
}

/// Soft TD targets with a fresh next-state action sample.
inline VectorXd td_targets(const Batch& batch, const Critics& critics, const Policy& policy,
                           double alpha, double gamma, Rng& rng) {
  const MatrixXd next_obs = policy.normalize(batch.next_observations);
  const MatrixXd noise = standard_normal(policy.action_dim(), batch.size(), rng);
  const ActorPass next = actor_pass(policy, next_obs, noise);
  const MatrixXd x = critic_input(next_obs, next.unit_action);
  const VectorXd q1 = forward(critics.target1, x).row(0).transpose();
  const VectorXd q2 = forward(critics.target2, x).row(0).transpose();
  VectorXd y(batch.size());
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    const double value = std::min(q1[j], q2[j]) - alpha * next.log_prob[j];
    y[j] = td_target(batch.rewards[j], batch.dones[j] != 0.0, value, gamma);
  }
  return y;
}

/// Mean of 0.5 (Q - y)^2 for one critic, with its parameter gradient.
inline std::pair<double, VectorXd> critic_loss_and_grad(const MlpParams& q, const MatrixXd& input,
                                                        const VectorXd& targets) {
  MlpTape tape;
  const MatrixXd out = forward(q, input, &tape);
  const VectorXd residual = out.row(0).transpose() - targets;
  const double n = static_cast<double>(targets.size());
  const double loss = 0.5 * residual.squaredNorm() / n;
  const MatrixXd grad_out = (residual / n).transpose();
  return {loss, backward(q, tape, grad_out).params};
}

struct UpdateOutcome {
  double loss = 0.0;
  bool applied = true;
};

/// One Adam step on both critics; reports the summed post-step loss.
inline UpdateOutcome critic_update(Critics& critics, AdamState& opt1, AdamState& opt2,
                                   const MatrixXd& normalized_obs, const MatrixXd& unit_action,
                                   const VectorXd& targets) {
  const MatrixXd x = critic_input(normalized_obs, unit_action);
  auto [l1, g1] = critic_loss_and_grad(critics.q1, x, targets);
  auto [l2, g2] = critic_loss_and_grad(critics.q2, x, targets);
  UpdateOutcome out;
  if (!std::isfinite(l1) || !std::isfinite(l2)) {
    out.loss = l1 + l2;
    out.applied = false;
    return out;
  }
  const bool a1 = adam_update(critics.q1.flat, g1, opt1);
  const bool a2 = adam_update(critics.q2.flat, g2, opt2);
  out.applied = a1 && a2;
  const VectorXd r1 = forward(critics.q1, x).row(0).transpose() - targets;
  const VectorXd r2 = forward(critics.q2, x).row(0).transpose() - targets;
  out.loss = 0.5 * (r1.squaredNorm() + r2.squaredNorm()) / static_cast<double>(targets.size());
  return out;
}

struct ActorObjective {
  double loss = 0.0;
  VectorXd grad;
  double mean_log_prob = 0.0;
};

/// E[alpha log pi - min(Q1, Q2)] under the reparametrized sample given by
/// `noise`, and its exact gradient with respect to the actor parameters.
inline ActorObjective actor_objective(const Policy& policy, const Critics& critics,
                                      const MatrixXd& normalized_obs, const MatrixXd& noise,
                                      double alpha) {
  const ActorPass pass = actor_pass(policy, normalized_obs, noise);
  const Eigen::Index b = normalized_obs.cols();
  const int a = policy.action_dim();
  const double inv_b = 1.0 / static_cast<double>(b);

  const MatrixXd x = critic_input(normalized_obs, pass.unit_action);
  MlpTape t1, t2;
  const MatrixXd q1 = forward(critics.q1, x, &t1);
  const MatrixXd q2 = forward(critics.q2, x, &t2);
  MatrixXd g1 = MatrixXd::Zero(1, b), g2 = MatrixXd::Zero(1, b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const bool first = q1(0, j) <= q2(0, j);
    const double q = first ? q1(0, j) : q2(0, j);
    (first ? g1 : g2)(0, j) = -inv_b;
    loss += inv_b * (alpha * pass.log_prob[j] - q);
  }
  const MatrixXd du = backward(critics.q1, t1, g1).input.bottomRows(a) +
                      backward(critics.q2, t2, g2).input.bottomRows(a);

  const Eigen::ArrayXXd u = pass.unit_action.array();
  const Eigen::ArrayXXd dx = alpha * inv_b * 2.0 * u + du.array() * (1.0 - u.square());
  MatrixXd head_grad(2 * a, b);
  head_grad.topRows(a) = dx.matrix();
  head_grad.bottomRows(a) =
      (pass.log_std_active * (dx * pass.std.array() * pass.noise.array() - alpha * inv_b)).matrix();

  ActorObjective out;
  out.loss = loss;
  out.grad = backward(policy.actor, pass.tape, head_grad).params;
  out.mean_log_prob = pass.log_prob.mean();
  return out;
}

inline UpdateOutcome actor_update(Policy& policy, AdamState& opt, const Critics& critics,
                                  const MatrixXd& normalized_obs, const MatrixXd& noise,
                                  double alpha) {
  const ActorObjective obj = actor_objective(policy, critics, normalized_obs, noise, alpha);
  UpdateOutcome out{obj.loss, false};
  if (std::isfinite(obj.loss)) out.applied = adam_update(policy.actor.flat, obj.grad, opt);
  return out;
}

/// Entropy temperature kept positive through its logarithm.
struct Temperature {
  double log_alpha = 0.0;
  AdamState opt;
  bool automatic = true;

  double alpha() const { return std::exp(log_alpha); }
};

inline Temperature make_temperature(double initial_alpha, double learning_rate, bool automatic) {
  Temperature t;
  t.log_alpha = std::log(initial_alpha);
  t.opt = make_adam(1, learning_rate);
  t.automatic = automatic;
  return t;
}

/// d/d(log alpha) of -log alpha * mean(log pi + target_entropy).
inline double temperature_gradient(const VectorXd& log_probs, double target_entropy) {
  return -(log_probs.array() + target_entropy).mean();
}

inline void temperature_update(Temperature& t, const VectorXd& log_probs, double target_entropy) {
  if (!t.automatic) return;
  VectorXd param(1), grad(1);
  param[0] = t.log_alpha;
  grad[0] = temperature_gradient(log_probs, target_entropy);
  if (adam_update(param, grad, t.opt)) t.log_alpha = param[0];
}

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // -mean log pi of the current batch
  bool applied = true;
};

class SacAgent {
public:
  SacAgent(const AgentDims& dims, const SacConfig& cfg, Rng& init_rng) : dims_(dims), cfg_(cfg) {
    cfg_.validate();
    if (dims_.observation_scale.size() != dims_.observation_dim) {
      dims_.observation_scale = VectorXd::Ones(dims_.observation_dim);
    }
    policy_ = make_policy(dims_, cfg_.hidden_width, init_rng);
    critics_ = make_critics(dims_, cfg_.hidden_width, init_rng);
    actor_opt_ = make_adam(policy_.actor.flat.size(), cfg_.learning_rate);
    q1_opt_ = make_adam(critics_.q1.flat.size(), cfg_.learning_rate);
    q2_opt_ = make_adam(critics_.q2.flat.size(), cfg_.learning_rate);
    temperature_ = make_temperature(cfg_.initial_alpha, cfg_.learning_rate, cfg_.auto_temperature);
  }

  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  const Critics& critics() const { return critics_; }
  const AgentDims& dims() const { return dims_; }
  const SacConfig& config() const { return cfg_; }
  double alpha() const { return temperature_.alpha(); }
  double target_entropy() const {
    return cfg_.target_entropy.value_or(-static_cast<double>(dims_.action_dim));
  }

  UpdateStats update(const Batch& batch, Rng& rng) {
    UpdateStats s;
    const MatrixXd obs = policy_.normalize(batch.observations);
    const MatrixXd noise = standard_normal(dims_.action_dim, batch.size(), rng);
    const ActorPass current = actor_pass(policy_, obs, noise);
    const double alpha = temperature_.alpha();
    temperature_update(temperature_, current.log_prob, target_entropy());

    const VectorXd y = td_targets(batch, critics_, policy_, alpha, cfg_.gamma, rng);
    const UpdateOutcome c = critic_update(critics_, q1_opt_, q2_opt_, obs, batch.actions, y);
    const UpdateOutcome a = actor_update(policy_, actor_opt_, critics_, obs, noise, alpha);
    polyak_update(critics_.target1, critics_.q1, cfg_.polyak_tau);
    polyak_update(critics_.target2, critics_.q2, cfg_.polyak_tau);

    s.critic_loss = c.loss;
    s.actor_loss = a.loss;
    s.alpha = alpha;
    s.entropy = -current.log_prob.mean();
    s.applied = c.applied && a.applied;
    return s;
  }

private:
  AgentDims dims_;
  SacConfig cfg_;
  Policy policy_;
  Critics critics_;
  AdamState actor_opt_, q1_opt_, q2_opt_;
  Temperature temperature_;
};

struct EvalStats {
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
  std::vector<double> final_errors;  // empty for environments without an error norm
  std::vector<int> steps;
};

template <class Env>
concept HasErrorNorm = requires(const Env& e) {
  { e.error_norm() } -> std::convertible_to<double>;
};

/// Runs `episodes` episodes with `act(env, observation)` choosing actions.
template <class Env, class ActFn>
EvalStats evaluate_with(Env& env, ActFn&& act, int episodes, Rng& rng) {
  EvalStats s;
  for (int ep = 0; ep < episodes; ++ep) {
    Observation obs = env.reset(rng);
    double ret = 0.0;
    int steps = 0;
    for (;;) {
      StepResult r = env.step(act(env, obs));
      ret += r.reward;
      ++steps;
      obs = std::move(r.observation);
      if (r.done) break;
    }
    s.returns.push_back(ret);
    s.steps.push_back(steps);
    if constexpr (HasErrorNorm<Env>) s.final_errors.push_back(env.error_norm());
  }
  double sum = 0.0;
  for (double r : s.returns) sum += r;
  s.mean_return = sum / episodes;
  double var = 0.0;
  for (double r : s.returns) var += (r - s.mean_return) * (r - s.mean_return);
  s.std_return = std::sqrt(var / episodes);
  return s;
}

/// Deterministic-action evaluation of a policy.
template <class Env>
EvalStats evaluate(const Policy& policy, Env& env, int episodes, Rng& rng) {
  Rng unused(0);
  return evaluate_with(
      env,
      [&](const Env&, const Observation& obs) {
        return sample_action(policy, obs.flat(), unused, true).action;
      },
      episodes, rng);
}

struct CurvePoint {
  int step = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

struct TrainStats {
  int updates = 0;
  int skipped_updates = 0;
  int episodes = 0;
  int diverged_episodes = 0;
  bool losses_finite = true;
  UpdateStats last;
};

struct TrainResult {
  Policy policy;
  std::vector<CurvePoint> curve;
  TrainStats stats;
};

/// Seed streams used by train.
enum class SeedStream : std::uint64_t { init = 0, env = 1, action = 2, replay = 3, eval = 4 };

inline Rng stream_rng(std::uint64_t seed, SeedStream s) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
}

/// Off-policy training loop. `make_env` builds fresh environments (one for
/// training, one for evaluation). Warmup steps use uniform random actions;
/// every later step is followed by one gradient update.
template <class MakeEnv>
TrainResult train(MakeEnv&& make_env, const AgentDims& dims, const SacConfig& cfg,
                  std::uint64_t seed,
                  const std::function<void(const CurvePoint&, const Policy&)>& on_eval = {}) {
  cfg.validate();
  Rng init_rng = stream_rng(seed, SeedStream::init);
  Rng env_rng = stream_rng(seed, SeedStream::env);
  Rng action_rng = stream_rng(seed, SeedStream::action);
  Rng replay_rng = stream_rng(seed, SeedStream::replay);
  Rng eval_rng = stream_rng(seed, SeedStream::eval);

  auto env = make_env();
  auto eval_env = make_env();
  if (env.observation_dim() != dims.observation_dim || env.action_dim() != dims.action_dim) {
    throw ShapeError("train: agent dimensions do not match the environment");
  }
  SacAgent agent(dims, cfg, init_rng);
  ReplayBuffer buffer(cfg.buffer_capacity, dims.observation_dim, dims.action_dim);
  TrainResult result;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  VectorXd obs = env.reset(env_rng).flat();
  for (int t = 1; t <= cfg.total_steps; ++t) {
    VectorXd u(dims.action_dim);
    if (t <= cfg.warmup_steps) {
      for (int i = 0; i < dims.action_dim; ++i) u[i] = unit(action_rng);
    } else {
      u = sample_action(agent.policy(), obs, action_rng, false).action / dims.action_scale;
    }
    StepResult r = env.step(dims.action_scale * u);
    VectorXd next = r.observation.flat();
    buffer.add({obs, u, r.reward, next, r.terminated});
    if (r.done) {
      ++result.stats.episodes;
      if (r.diverged) ++result.stats.diverged_episodes;
      obs = env.reset(env_rng).flat();
    } else {
      obs = std::move(next);
    }

    if (t > cfg.warmup_steps && buffer.size() >= cfg.batch_size) {
      const UpdateStats s = agent.update(buffer.sample(cfg.batch_size, replay_rng), action_rng);
      ++result.stats.updates;
      if (!s.applied) ++result.stats.skipped_updates;
      if (!std::isfinite(s.critic_loss) || !std::isfinite(s.actor_loss)) {
        result.stats.losses_finite = false;
      }
      result.stats.last = s;
    }

    if (t % cfg.eval_interval == 0) {
      const EvalStats e = evaluate(agent.policy(), eval_env, cfg.eval_episodes, eval_rng);
      if (!std::isfinite(e.mean_return)) result.stats.losses_finite = false;
      CurvePoint p{t, e.mean_return, e.std_return};
      result.curve.push_back(p);
      if (on_eval) on_eval(p, agent.policy());
    }
  }
  result.policy = agent.policy();
  return result;
}

}  // namespace isp
