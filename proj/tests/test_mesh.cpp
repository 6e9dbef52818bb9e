#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>
#include <string>

#include "isp/mesh.hpp"

using namespace isp;

TEST(Mesh, CountsFor21NodesPerSide) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  EXPECT_EQ(m.node_count(), 21u * 21u);
  EXPECT_EQ(m.triangles.size(), 2u * 20u * 20u);
  EXPECT_EQ(m.left_candidates.size(), 19u);
  EXPECT_EQ(m.right_candidates.size(), 19u);
}

TEST(Mesh, SmallestGrid) {
  const TissueMesh m = build_square_mesh(100.0, 3);
  EXPECT_EQ(m.node_count(), 9u);
  EXPECT_EQ(m.triangles.size(), 8u);
  EXPECT_EQ(m.fixed_nodes, (std::vector<NodeIndex>{0, 2, 6, 8}));
}

TEST(Mesh, RejectsTooCoarseResolution) {
  EXPECT_THROW(build_square_mesh(100.0, 2), ParameterError);
  EXPECT_THROW(build_square_mesh(-1.0, 5), ParameterError);
}

class MeshSizes : public ::testing::TestWithParam<std::pair<double, int>> {};

TEST_P(MeshSizes, AreaSumsToSquare) {
  const auto [side, res] = GetParam();
  const TissueMesh m = build_square_mesh(side, res);
  double total = 0.0;
  for (const auto& t : m.triangles) {
    const double a = signed_area(m.node_positions[t[0]], m.node_positions[t[1]], m.node_positions[t[2]]);
    EXPECT_GT(a, 0.0);
    total += a;
  }
  EXPECT_NEAR(total, side * side, 1e-9 * side * side);
}

TEST_P(MeshSizes, NodeSetInvariants) {
  const auto [side, res] = GetParam();
  const TissueMesh m = build_square_mesh(side, res);
  ASSERT_EQ(m.fixed_nodes.size(), 4u);
  for (NodeIndex f : m.fixed_nodes) {
    const Vec2& p = m.node_positions[f];
    EXPECT_TRUE((p.x() == 0.0 || p.x() == side) && (p.y() == 0.0 || p.y() == side));
  }
  std::set<NodeIndex> left(m.left_candidates.begin(), m.left_candidates.end());
  std::set<NodeIndex> right(m.right_candidates.begin(), m.right_candidates.end());
  for (NodeIndex n : m.left_candidates) {
    EXPECT_EQ(m.node_positions[n].x(), 0.0);
    EXPECT_FALSE(m.is_fixed(n));
    EXPECT_FALSE(right.count(n));
  }
  for (NodeIndex n : m.right_candidates) {
    EXPECT_EQ(m.node_positions[n].x(), side);
    EXPECT_FALSE(m.is_fixed(n));
  }
  for (std::size_t k = 1; k < m.left_candidates.size(); ++k) {
    EXPECT_LT(m.node_positions[m.left_candidates[k - 1]].y(), m.node_positions[m.left_candidates[k]].y());
  }
  EXPECT_FALSE(m.interior_nodes.empty());
  for (NodeIndex n : m.interior_nodes) {
    EXPECT_FALSE(left.count(n) || right.count(n) || m.is_fixed(n));
    const Vec2& p = m.node_positions[n];
    EXPECT_GE(p.x(), 0.3 * side - 1e-9);
    EXPECT_LE(p.x(), 0.7 * side + 1e-9);
    EXPECT_GE(p.y(), 0.3 * side - 1e-9);
    EXPECT_LE(p.y(), 0.7 * side + 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, MeshSizes,
                         ::testing::Values(std::pair{100.0, 3}, std::pair{100.0, 11},
                                           std::pair{100.0, 21}, std::pair{37.5, 8}));

TEST(NearestNode, ExactNodePosition) {
  const TissueMesh m = build_square_mesh(100.0, 11);
  for (NodeIndex k : {0, 17, 60, 120}) EXPECT_EQ(nearest_node(m, m.node_positions[k]), k);
}

TEST(NearestNode, TieGoesToSmallerIndex) {
  const TissueMesh m = build_square_mesh(100.0, 11);
  const Vec2 mid = 0.5 * (m.node_positions[5] + m.node_positions[6]);
  EXPECT_EQ(nearest_node(m, mid), 5);
}

TEST(NearestNode, CenterOf21Mesh) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  EXPECT_EQ(nearest_node(m, Vec2(50.0, 50.0)), 10 * 21 + 10);
}

TEST(NearestNode, OutOfDomain) {
  const TissueMesh m = build_square_mesh(100.0, 11);
  EXPECT_THROW(nearest_node(m, Vec2(-10.5, 50.0)), OutOfDomainError);
  EXPECT_THROW(nearest_node(m, Vec2(50.0, 111.0)), OutOfDomainError);
  EXPECT_NO_THROW(nearest_node(m, Vec2(-9.0, 50.0)));
}

TEST(NearestNode, SnappingIsIdempotent) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 104.0);
  for (int i = 0; i < 500; ++i) {
    const NodeIndex n = nearest_node(m, Vec2(u(rng), u(rng)));
    EXPECT_EQ(nearest_node(m, m.node_positions[n]), n);
  }
}

TEST(CandidateAt, Endpoints) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  EXPECT_EQ(candidate_at(m, Side::left, 0.0), m.left_candidates.front());
  EXPECT_EQ(candidate_at(m, Side::left, 1.0), m.left_candidates.back());
}

TEST(CandidateAt, MidpointRounding) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  EXPECT_EQ(candidate_at(m, Side::right, 0.5), m.right_candidates[9]);
}

TEST(CandidateAt, RejectsOutsideUnitInterval) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  EXPECT_THROW(candidate_at(m, Side::left, -0.01), ParameterError);
  EXPECT_THROW(candidate_at(m, Side::left, 1.01), ParameterError);
}

TEST(CandidateAt, MonotoneInU) {
  const TissueMesh m = build_square_mesh(100.0, 21);
  for (Side s : {Side::left, Side::right}) {
    const auto& list = m.candidates(s);
    std::size_t prev = 0;
    for (int i = 0; i <= 1000; ++i) {
      const NodeIndex n = candidate_at(m, s, i / 1000.0);
      const auto pos = static_cast<std::size_t>(std::find(list.begin(), list.end(), n) - list.begin());
      EXPECT_GE(pos, prev);
      prev = pos;
    }
  }
}

TEST(CandidateAt, ParameterRoundTrip) {
  const TissueMesh m = build_square_mesh(100.0, 11);
  for (NodeIndex n : m.left_candidates) {
    EXPECT_EQ(candidate_at(m, Side::left, candidate_parameter(m, Side::left, n)), n);
  }
  EXPECT_THROW(candidate_parameter(m, Side::left, m.right_candidates[0]), ParameterError);
}

TEST(MeshText, NodeAndTriangleLines) {
  const TissueMesh m = build_square_mesh(100.0, 3);
  std::ostringstream os;
  write_mesh_text(os, m);
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1 + 9 + 1 + 8);
  EXPECT_NE(os.str().find("\n4 50 50\n"), std::string::npos);
  EXPECT_NE(os.str().find("\n0 0 1 4\n"), std::string::npos);
}
