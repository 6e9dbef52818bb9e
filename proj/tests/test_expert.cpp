#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "isp/expert.hpp"

using namespace isp;

TEST(Expert, FullStepTowardDistantGoal) {
  const std::vector<Vec2> p{Vec2(0, 0)}, des{Vec2(1, 0)}, q{Vec2(-5, 0)};
  const VectorXd a = expert_action(p, des, q, 0.2);
  EXPECT_NEAR(a[0], 0.2, 1e-15);
  EXPECT_EQ(a[1], 0.0);
}

TEST(Expert, ZeroActionAtGoal) {
  const std::vector<Vec2> p{Vec2(1, 2), Vec2(3, 4)}, q{Vec2(0, 0), Vec2(9, 9)};
  EXPECT_EQ(expert_action(p, p, q, 0.2), VectorXd::Zero(4));
}

TEST(Expert, TieFollowsFirstPoint) {
  const std::vector<Vec2> p{Vec2(-1, 0), Vec2(1, 0)}, des{Vec2(-1, 5), Vec2(1, -5)}, q{Vec2(0, 0)};
  const VectorXd a = expert_action(p, des, q, 0.2);
  EXPECT_NEAR(a[1], 0.2, 1e-15);
}

TEST(Expert, SlowsDownNearGoal) {
  const std::vector<Vec2> p{Vec2(0, 0)}, des{Vec2(0, 0.05)}, q{Vec2(3, 3)};
  const VectorXd a = expert_action(p, des, q, 0.2);
  EXPECT_NEAR(a[1], 0.05, 1e-15);
  ExpertConfig half;
  half.step_gain = 0.5;
  EXPECT_NEAR(expert_action(p, des, q, 0.2, half)[1], 0.025, 1e-15);
}

TEST(Expert, GainMustLieInUnitInterval) {
  ExpertConfig c;
  c.step_gain = 1.5;
  EXPECT_THROW(c.validate(), ParameterError);
  c.step_gain = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Expert, ActionsStayWithinBound) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<Vec2> p, des, q;
    for (int i = 0; i < 3; ++i) {
      p.emplace_back(u(rng), u(rng));
      des.emplace_back(u(rng) * 0.01 * (t % 7), u(rng));
    }
    for (int g = 0; g < 2; ++g) q.emplace_back(u(rng), u(rng));
    const VectorXd a = expert_action(p, des, q, 0.2);
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 0.2 + 1e-15);
  }
}

// Tuning criterion for the simulator: the expert should bring most random
// episodes under 10% of the initial error within 100 steps.
TEST(Expert, SolvesMostRandomEpisodes) {
  IspEnv env(std::make_shared<const TissueMesh>(build_square_mesh(100.0, 21)), MaterialParams{},
             SolverConfig{}, EnvConfig{});
  Rng rng(2024);
  int solved = 0;
  for (int episode = 0; episode < 10; ++episode) {
    env.reset(rng);
    const double e0 = env.error_norm();
    for (int t = 0; t < 100; ++t) {
      if (env.step(expert_action(env)).done) break;
      if (env.error_norm() < 0.1 * e0) break;
    }
    if (env.error_norm() < 0.1 * e0) ++solved;
  }
  RecordProperty("solved", solved);
  EXPECT_GE(solved, 8) << "expert solved " << solved << " of 10 episodes";
}
