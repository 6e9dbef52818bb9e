#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "isp/sac.hpp"
#include "isp/toy_env.hpp"

using namespace isp;

namespace {

AgentDims unit_dims(int obs, int act, double scale = 1.0) {
  return {obs, act, scale, VectorXd::Ones(obs)};
}

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
  return m;
}

// Entropy of tanh(X), X ~ N(mu, sigma^2): H(X) + E[log(1 - tanh(X)^2)],
// the expectation by trapezoidal quadrature over +-12 sigma.
double squashed_entropy(double mu, double sigma) {
  const double h_gauss = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sigma * sigma);
  const int n = 200000;
  const double lo = mu - 12.0 * sigma, hi = mu + 12.0 * sigma, dx = (hi - lo) / n;
  double e = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double x = lo + k * dx;
    const double z = (x - mu) / sigma;
    const double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    const double t = std::tanh(x);
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    e += w * pdf * std::log1p(-t * t) * dx;
  }
  return h_gauss + e;
}

}  // namespace

TEST(Policy, ZeroActorGivesZeroDeterministicAction) {
  Rng rng(1);
  Policy p = make_policy(unit_dims(6, 4, 0.2), 32, rng);
  p.actor.flat.setZero();
  const ActionSample s = sample_action(p, VectorXd::Ones(6), rng, true);
  EXPECT_EQ(s.action, VectorXd::Zero(4));
}

TEST(Policy, SamplesRespectActionBound) {
  Rng rng(2);
  Policy p = make_policy(unit_dims(6, 4, 0.2), 32, rng);
  p.actor.flat *= 30.0;
  for (int k = 0; k < 2000; ++k) {
    const ActionSample s = sample_action(p, random_matrix(6, 1, rng, 3.0).col(0), rng, false);
    EXPECT_LE(s.action.cwiseAbs().maxCoeff(), 0.2);
    EXPECT_TRUE(std::isfinite(s.log_prob));
  }
}

TEST(Policy, LogStdIsClamped) {
  Rng rng(3);
  Policy p = make_policy(unit_dims(2, 1), 4, rng);
  p.actor.flat.setZero();
  p.actor.bias(2)[1] = 50.0;
  EXPECT_EQ(actor_pass(p, MatrixXd::Zero(2, 1), MatrixXd::Zero(1, 1)).log_std(0, 0), kLogStdMax);
  p.actor.bias(2)[1] = -50.0;
  EXPECT_EQ(actor_pass(p, MatrixXd::Zero(2, 1), MatrixXd::Zero(1, 1)).log_std(0, 0), kLogStdMin);
}

TEST(Policy, MonteCarloEntropyMatchesQuadrature) {
  Rng rng(4);
  Policy p = make_policy(unit_dims(1, 2), 4, rng);
  p.actor.flat.setZero();
  const double mu[2] = {0.3, -1.1}, log_sigma[2] = {-0.2, 0.4};
  for (int i = 0; i < 2; ++i) {
    p.actor.bias(2)[i] = mu[i];
    p.actor.bias(2)[2 + i] = log_sigma[i];
  }
  const int n = 100000;
  const ActorPass pass = actor_pass(p, MatrixXd::Zero(1, n), standard_normal(2, n, rng));
  const double mc = -pass.log_prob.mean();
  const double exact = squashed_entropy(mu[0], std::exp(log_sigma[0])) +
                       squashed_entropy(mu[1], std::exp(log_sigma[1]));
  EXPECT_NEAR(mc, exact, 0.02 * std::abs(exact));
}

TEST(TdTarget, Arithmetic) {
  EXPECT_NEAR(td_target(1.0, false, 10.0, 0.99), 10.9, 1e-12);
  EXPECT_EQ(td_target(1.0, true, 10.0, 0.99), 1.0);
}

TEST(TdTarget, ZeroTemperatureUsesMinimumCritic) {
  Rng rng(5);
  const AgentDims d = unit_dims(3, 2);
  const Policy p = make_policy(d, 16, rng);
  const Critics c = make_critics(d, 16, rng);
  Batch b;
  b.observations = random_matrix(3, 8, rng);
  b.next_observations = random_matrix(3, 8, rng);
  b.actions = random_matrix(2, 8, rng);
  b.rewards = random_matrix(8, 1, rng).col(0);
  b.dones = VectorXd::Zero(8);
  b.dones[3] = 1.0;
  Rng r1(77), r2(77);
  const VectorXd y = td_targets(b, c, p, 0.0, 0.9, r1);
  const MatrixXd noise = standard_normal(2, 8, r2);
  const ActorPass next = actor_pass(p, b.next_observations, noise);
  const MatrixXd x = critic_input(b.next_observations, next.unit_action);
  const VectorXd q1 = forward(c.target1, x).row(0).transpose();
  const VectorXd q2 = forward(c.target2, x).row(0).transpose();
  for (int j = 0; j < 8; ++j) {
    const double expected = j == 3 ? b.rewards[j] : b.rewards[j] + 0.9 * std::min(q1[j], q2[j]);
    EXPECT_NEAR(y[j], expected, 1e-12);
  }
}

TEST(CriticUpdate, ZeroResidualLeavesParameters) {
  Rng rng(6);
  const AgentDims d = unit_dims(3, 2);
  Critics c = make_critics(d, 16, rng);
  c.q2 = c.q1;
  const MatrixXd obs = random_matrix(3, 10, rng), act = random_matrix(2, 10, rng);
  const VectorXd y = forward(c.q1, critic_input(obs, act)).row(0).transpose();
  const Critics before = c;
  AdamState o1 = make_adam(c.q1.flat.size(), 1e-3), o2 = make_adam(c.q2.flat.size(), 1e-3);
  const UpdateOutcome out = critic_update(c, o1, o2, obs, act, y);
  EXPECT_EQ(out.loss, 0.0);
  EXPECT_EQ(c.q1.flat, before.q1.flat);
  EXPECT_EQ(c.q2.flat, before.q2.flat);
}

TEST(CriticUpdate, OverfitsFixedBatch) {
  Rng rng(7);
  const AgentDims d = unit_dims(4, 2);
  Critics c = make_critics(d, 64, rng);
  const MatrixXd obs = random_matrix(4, 32, rng), act = random_matrix(2, 32, rng);
  const VectorXd y = random_matrix(32, 1, rng, 3.0).col(0);
  AdamState o1 = make_adam(c.q1.flat.size(), 7e-4), o2 = make_adam(c.q2.flat.size(), 7e-4);
  double prev = std::numeric_limits<double>::infinity();
  double first = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double loss = critic_update(c, o1, o2, obs, act, y).loss;
    if (k == 0) first = loss;
    EXPECT_LT(loss, prev) << "update " << k;
    prev = loss;
  }
  EXPECT_LT(prev, 0.5 * first);
}

TEST(CriticUpdate, SingleSampleRegression) {
  Rng rng(8);
  const AgentDims d = unit_dims(2, 1);
  Critics c = make_critics(d, 8, rng);
  const MatrixXd obs = random_matrix(2, 1, rng), act = random_matrix(1, 1, rng);
  VectorXd y(1);
  y << 2.5;
  const double q = forward(c.q1, critic_input(obs, act))(0, 0);
  const auto [loss, grad] = critic_loss_and_grad(c.q1, critic_input(obs, act), y);
  EXPECT_NEAR(loss, 0.5 * (q - 2.5) * (q - 2.5), 1e-14);
  const VectorXd expected = backward(c.q1, VectorXd(critic_input(obs, act).col(0)), VectorXd::Constant(1, q - 2.5)).params;
  EXPECT_LE((grad - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ActorObjective, GradientMatchesCentralDifferences) {
  Rng rng(9);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const AgentDims d = unit_dims(3, 2);
    Policy p = make_policy(d, 4, rng);
    const Critics c = make_critics(d, 8, rng);
    const MatrixXd obs = random_matrix(3, 6, rng);
    const MatrixXd noise = random_matrix(2, 6, rng);
    const double alpha = 0.05 + 0.5 * (draw % 5);
    const ActorObjective obj = actor_objective(p, c, obs, noise, alpha);
    VectorXd numeric(p.actor.flat.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
      const double keep = p.actor.flat[i];
      p.actor.flat[i] = keep + h;
      const double up = actor_objective(p, c, obs, noise, alpha).loss;
      p.actor.flat[i] = keep - h;
      const double down = actor_objective(p, c, obs, noise, alpha).loss;
      p.actor.flat[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, (obj.grad - numeric).norm() / std::max(obj.grad.norm(), numeric.norm()));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(ActorObjective, ConstantCriticLeavesOnlyEntropyTerm) {
  Rng rng(10);
  const AgentDims d = unit_dims(3, 2);
  const Policy p = make_policy(d, 8, rng);
  Critics c = make_critics(d, 8, rng);
  c.q1.flat.setZero();
  c.q2.flat.setZero();
  c.q1.bias(2)[0] = 4.0;
  c.q2.bias(2)[0] = 7.0;
  const MatrixXd obs = random_matrix(3, 5, rng), noise = random_matrix(2, 5, rng);
  EXPECT_EQ(actor_objective(p, c, obs, noise, 0.0).grad, VectorXd::Zero(p.actor.flat.size()));
  const VectorXd g1 = actor_objective(p, c, obs, noise, 1.0).grad;
  const VectorXd g3 = actor_objective(p, c, obs, noise, 3.0).grad;
  EXPECT_LE((g3 - 3.0 * g1).cwiseAbs().maxCoeff(), 1e-12);
  const ActorObjective o = actor_objective(p, c, obs, noise, 1.0);
  EXPECT_NEAR(o.loss, o.mean_log_prob - 4.0, 1e-12);
}

TEST(ActorUpdate, FollowsSyntheticCritic) {
  // Q(s, a) = |s + a| - |s - a| prefers actions with the sign of s.
  Rng rng(11);
  const AgentDims d = unit_dims(1, 1);
  Policy p = make_policy(d, 16, rng);
  Critics c = make_critics(d, 2, rng);
  c.q1 = make_mlp({2, 4, 1});
  c.q1.weight(0) << 1, 1, -1, -1, 1, -1, -1, 1;
  c.q1.weight(1) << 1, 1, -1, -1;
  c.q2 = c.q1;
  AdamState opt = make_adam(p.actor.flat.size(), 3e-3);
  MatrixXd obs(1, 64);
  for (int j = 0; j < 64; ++j) obs(0, j) = j % 2 ? 1.0 : -1.0;
  for (int k = 0; k < 300; ++k) actor_update(p, opt, c, obs, standard_normal(1, 64, rng), 0.0);
  Rng unused(0);
  EXPECT_GT(sample_action(p, VectorXd::Constant(1, 1.0), unused, true).action[0], 0.5);
  EXPECT_LT(sample_action(p, VectorXd::Constant(1, -1.0), unused, true).action[0], -0.5);
}

TEST(Temperature, FixedPointAndSign) {
  VectorXd lp = VectorXd::Constant(10, 4.0);
  EXPECT_EQ(temperature_gradient(lp, -4.0), 0.0);
  Temperature t = make_temperature(1.0, 1e-2, true);
  temperature_update(t, lp, -4.0);
  EXPECT_EQ(t.alpha(), 1.0);

  // log pi far above -target_entropy: the policy is too deterministic.
  temperature_update(t, VectorXd::Constant(10, 9.0), -4.0);
  EXPECT_GT(t.alpha(), 1.0);
  Temperature u = make_temperature(1.0, 1e-2, true);
  temperature_update(u, VectorXd::Constant(10, -2.0), -4.0);
  EXPECT_LT(u.alpha(), 1.0);
}

TEST(Temperature, DisabledStaysConstant) {
  Temperature t = make_temperature(0.3, 1e-2, false);
  for (int k = 0; k < 10; ++k) temperature_update(t, VectorXd::Constant(4, 8.0), -4.0);
  EXPECT_DOUBLE_EQ(t.alpha(), 0.3);
}

TEST(ReplayBuffer, OverwritesOldestFirst) {
  ReplayBuffer b(5, 1, 1);
  for (int k = 0; k < 8; ++k) {
    b.add({VectorXd::Constant(1, k), VectorXd::Zero(1), static_cast<double>(k), VectorXd::Zero(1), false});
    EXPECT_LE(b.size(), 5);
  }
  std::vector<double> present;
  for (int k = 0; k < b.size(); ++k) present.push_back(b.at(k).reward);
  std::sort(present.begin(), present.end());
  EXPECT_EQ(present, (std::vector<double>{3, 4, 5, 6, 7}));
  Rng rng(1);
  const Batch s = b.sample(100, rng);
  EXPECT_GE(s.rewards.minCoeff(), 3.0);
  EXPECT_LE(s.rewards.maxCoeff(), 7.0);
  EXPECT_THROW(b.add({VectorXd::Zero(2), VectorXd::Zero(1), 0, VectorXd::Zero(1), false}), ShapeError);
}

TEST(Polyak, TargetIsConvexCombination) {
  Rng rng(12);
  MlpParams target = make_mlp({2, 3, 1}, rng), source = make_mlp({2, 3, 1}, rng);
  const VectorXd t0 = target.flat;
  polyak_update(target, source, 0.25);
  EXPECT_LE((target.flat - (0.75 * t0 + 0.25 * source.flat)).cwiseAbs().maxCoeff(), 1e-15);
  polyak_update(target, source, 1.0);
  EXPECT_EQ(target.flat, source.flat);
}

TEST(SacConfig, Validation) {
  SacConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.buffer_capacity = 100;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.warmup_steps = 6000;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Evaluate, ZeroPolicyOnStaticToyGivesZeroReturn) {
  Rng rng(13);
  Policy p = make_policy(unit_dims(1, 1, 0.2), 8, rng);
  p.actor.flat.setZero();
  const Policy before = p;
  PointMassEnv env;
  Rng eval_rng(3);
  const EvalStats s = evaluate(p, env, 4, eval_rng);
  EXPECT_EQ(s.mean_return, 0.0);
  EXPECT_EQ(s.std_return, 0.0);
  EXPECT_EQ(p.actor.flat, before.actor.flat);
}

TEST(PointMass, GreedyOptimum) {
  PointMassEnv env;
  // From 0.5: errors 0.3, 0.1, then 0 for the remaining 18 steps.
  const double expected = (1 - std::sqrt(0.6)) + (1 - std::sqrt(0.2)) + 18.0;
  EXPECT_NEAR(env.optimal_return(0.5), expected, 1e-12);
  env.reset_to(0.5);
  double ret = 0.0;
  for (int t = 0; t < 20; ++t) ret += env.step(VectorXd::Constant(1, -1.0)).reward;
  EXPECT_LT(ret, expected);
}

namespace {

SacConfig small_config() {
  SacConfig c;
  c.total_steps = 600;
  c.warmup_steps = 200;
  c.batch_size = 32;
  c.buffer_capacity = 1000;
  c.eval_interval = 200;
  c.eval_episodes = 3;
  c.hidden_width = 32;
  return c;
}

}  // namespace

TEST(Train, IdenticalSeedsGiveIdenticalCurves) {
  const AgentDims d = unit_dims(1, 1, 0.2);
  const auto a = train([] { return PointMassEnv(); }, d, small_config(), 5);
  const auto b = train([] { return PointMassEnv(); }, d, small_config(), 5);
  ASSERT_EQ(a.curve.size(), 3u);
  for (std::size_t k = 0; k < a.curve.size(); ++k) {
    EXPECT_EQ(a.curve[k].mean_return, b.curve[k].mean_return);
    EXPECT_EQ(a.curve[k].std_return, b.curve[k].std_return);
  }
  EXPECT_EQ(a.policy.actor.flat, b.policy.actor.flat);
  EXPECT_TRUE(a.stats.losses_finite);
  EXPECT_EQ(a.stats.updates, 400);
  const auto c = train([] { return PointMassEnv(); }, d, small_config(), 6);
  EXPECT_NE(a.policy.actor.flat, c.policy.actor.flat);
}

TEST(Train, TargetsStayConvexCombinationOfHistory) {
  // With tau = 1 the targets equal the online critics after every update.
  Rng rng(14);
  const AgentDims d = unit_dims(1, 1, 0.2);
  SacConfig cfg = small_config();
  cfg.polyak_tau = 1.0;
  SacAgent agent(d, cfg, rng);
  ReplayBuffer buf(100, 1, 1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 100; ++k) {
    buf.add({VectorXd::Constant(1, u(rng)), VectorXd::Constant(1, u(rng)), u(rng), VectorXd::Constant(1, u(rng)), false});
  }
  for (int k = 0; k < 5; ++k) agent.update(buf.sample(32, rng), rng);
  EXPECT_EQ(agent.critics().target1.flat, agent.critics().q1.flat);
  EXPECT_EQ(agent.critics().target2.flat, agent.critics().q2.flat);
}

TEST(Train, DimensionMismatchThrows) {
  EXPECT_THROW(train([] { return PointMassEnv(); }, unit_dims(2, 1, 0.2), small_config(), 1), ShapeError);
}
