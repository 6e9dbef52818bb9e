#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "isp/errors.hpp"

namespace isp {

using Vec2 = Eigen::Vector2d;
using NodeIndex = int;
using Triangle = std::array<NodeIndex, 3>;

enum class Side { left, right };

/// Triangulated square sheet on [0, side]^2 with clamped corners.
///
/// Nodes are numbered row-major: node (i, j) with x-index i and y-index j has
/// index j * resolution + i. Candidate lists are ordered by increasing y.
struct TissueMesh {
  std::vector<Vec2> node_positions;
  std::vector<Triangle> triangles;
  std::vector<NodeIndex> fixed_nodes;      // sorted
  std::vector<NodeIndex> left_candidates;  // x = 0, corners excluded
  std::vector<NodeIndex> right_candidates; // x = side, corners excluded
  std::vector<NodeIndex> interior_nodes;   // sorted, central region
  double side_length = 0.0;
  int resolution = 0;

  std::size_t node_count() const { return node_positions.size(); }
  double cell_size() const { return side_length / (resolution - 1); }

  bool is_fixed(NodeIndex n) const {
    return std::binary_search(fixed_nodes.begin(), fixed_nodes.end(), n);
  }

  const std::vector<NodeIndex>& candidates(Side side) const {
    return side == Side::left ? left_candidates : right_candidates;
  }
};

inline double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

/// Fraction of the side length covered (per axis) by the central region from
/// which controlled points are drawn.
inline constexpr double kInteriorFraction = 0.4;

/// Regular grid of resolution x resolution nodes, each cell split into two
/// counter-clockwise triangles with diagonals alternating in a checkerboard.
inline TissueMesh build_square_mesh(double side_mm, int resolution) {
  if (!(side_mm > 0.0) || !std::isfinite(side_mm)) {
    throw ParameterError("build_square_mesh: side length must be positive");
  }
  if (resolution < 3) {
    throw ParameterError("build_square_mesh: resolution must be at least 3, got " +
                         std::to_string(resolution));
  }

  TissueMesh mesh;
  mesh.side_length = side_mm;
  mesh.resolution = resolution;
  const int n = resolution;
  const double h = side_mm / (n - 1);
  auto id = [n](int i, int j) { return j * n + i; };

  mesh.node_positions.reserve(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      // Edge coordinates are pinned exactly so side nodes compare equal to 0 / side.
      const double x = (i == n - 1) ? side_mm : i * h;
      const double y = (j == n - 1) ? side_mm : j * h;
      mesh.node_positions.emplace_back(x, y);
    }
  }

  mesh.triangles.reserve(2 * static_cast<std::size_t>(n - 1) * (n - 1));
  for (int j = 0; j + 1 < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      if ((i + j) % 2 == 0) {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({a, c, d});
      } else {
        mesh.triangles.push_back({a, b, d});
        mesh.triangles.push_back({b, c, d});
      }
    }
  }

  mesh.fixed_nodes = {id(0, 0), id(n - 1, 0), id(0, n - 1), id(n - 1, n - 1)};
  std::sort(mesh.fixed_nodes.begin(), mesh.fixed_nodes.end());

  for (int j = 1; j + 1 < n; ++j) {
    mesh.left_candidates.push_back(id(0, j));
    mesh.right_candidates.push_back(id(n - 1, j));
  }

  const double lo = 0.5 * (1.0 - kInteriorFraction) * side_mm;
  const double hi = 0.5 * (1.0 + kInteriorFraction) * side_mm;
  const double eps = 1e-9 * side_mm;
  for (int j = 1; j + 1 < n; ++j) {
    for (int i = 1; i + 1 < n; ++i) {
      const Vec2& p = mesh.node_positions[id(i, j)];
      if (p.x() >= lo - eps && p.x() <= hi + eps && p.y() >= lo - eps && p.y() <= hi + eps) {
        mesh.interior_nodes.push_back(id(i, j));
      }
    }
  }
  return mesh;
}

/// Index of the node closest to `point`, ties resolved toward the smaller index.
inline NodeIndex nearest_node(const TissueMesh& mesh, const Vec2& point) {
  const double margin = mesh.cell_size();
  if (!point.allFinite() || point.x() < -margin || point.y() < -margin ||
      point.x() > mesh.side_length + margin || point.y() > mesh.side_length + margin) {
    throw OutOfDomainError("nearest_node: point outside the tissue domain");
  }
  NodeIndex best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mesh.node_positions.size(); ++k) {
    const double d2 = (mesh.node_positions[k] - point).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<NodeIndex>(k);
    }
  }
  return best;
}

/// Position within a candidate list of `count` entries addressed by u in [0, 1].
inline std::size_t candidate_position(std::size_t count, double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    throw ParameterError("candidate_at: u must lie in [0, 1]");
  }
  if (count == 0) throw ConfigurationError("candidate_at: empty candidate list");
  return static_cast<std::size_t>(std::lround(u * static_cast<double>(count - 1)));
}

inline NodeIndex candidate_at(const TissueMesh& mesh, Side side, double u) {
  const auto& list = mesh.candidates(side);
  return list[candidate_position(list.size(), u)];
}

/// Inverse of candidate_at on list positions: the u value that addresses `node`.
inline double candidate_parameter(const TissueMesh& mesh, Side side, NodeIndex node) {
  const auto& list = mesh.candidates(side);
  const auto it = std::find(list.begin(), list.end(), node);
  if (it == list.end()) throw ParameterError("candidate_parameter: node is not a candidate");
  if (list.size() == 1) return 0.0;
  return static_cast<double>(it - list.begin()) / static_cast<double>(list.size() - 1);
}

/// Plain-text dump: "id x y" per node, then "id n1 n2 n3" per triangle.
inline void write_mesh_text(std::ostream& os, const TissueMesh& mesh) {
  os << "# nodes " << mesh.node_count() << '\n';
  os.precision(17);
  for (std::size_t k = 0; k < mesh.node_positions.size(); ++k) {
    os << k << ' ' << mesh.node_positions[k].x() << ' ' << mesh.node_positions[k].y() << '\n';
  }
  os << "# triangles " << mesh.triangles.size() << '\n';
  for (std::size_t k = 0; k < mesh.triangles.size(); ++k) {
    const auto& t = mesh.triangles[k];
    os << k << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
}

}  // namespace isp
