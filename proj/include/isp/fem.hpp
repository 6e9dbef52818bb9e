#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "isp/errors.hpp"
#include "isp/mesh.hpp"

namespace isp {

using Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Material and constraint parameters. Units are mm, N, MPa (= N/mm^2), s.
///
/// Mass is expressed in the consistent unit N*s^2/mm (one tonne), so
/// `density` is an areal density in t/mm^2. One mg/mm^2 equals 1e-9 t/mm^2.
struct MaterialParams {
  double young_modulus = 0.9;   // MPa
  double poisson_ratio = 0.49;
  double thickness = 1.0;       // mm
  double density = 1e-9;        // t/mm^2
  double rayleigh_mass = 0.1;   // 1/s
  double rayleigh_stiffness = 0.01;  // s
  double spring_stiffness_ks = 1e4;  // N/mm

  void validate() const {
    if (!(young_modulus > 0.0)) throw ParameterError("material: young_modulus must be > 0");
    if (!(poisson_ratio > 0.0 && poisson_ratio < 0.5)) {
      throw ParameterError("material: poisson_ratio must lie in (0, 0.5)");
    }
    if (!(thickness > 0.0)) throw ParameterError("material: thickness must be > 0");
    if (!(density > 0.0)) throw ParameterError("material: density must be > 0");
    if (!(spring_stiffness_ks > 0.0)) throw ParameterError("material: spring_stiffness_ks must be > 0");
    if (!(rayleigh_mass >= 0.0) || !(rayleigh_stiffness >= 0.0)) {
      throw ParameterError("material: damping coefficients must be >= 0");
    }
  }
};

struct SolverConfig {
  double dt = 0.01;                // s
  int substeps_per_control = 10;
  int max_cg_iterations = 50;
  double cg_tolerance = 1e-9;      // relative residual

  void validate() const {
    if (!(dt > 0.0)) throw ParameterError("solver: dt must be > 0");
    if (substeps_per_control < 1) throw ParameterError("solver: substeps_per_control must be >= 1");
    if (max_cg_iterations < 1) throw ParameterError("solver: max_cg_iterations must be >= 1");
    if (!(cg_tolerance > 0.0 && cg_tolerance < 1.0)) {
      throw ParameterError("solver: cg_tolerance must lie in (0, 1)");
    }
  }
};

/// Full physical state. Vectors are interleaved (x0, y0, x1, y1, ...).
struct SimState {
  VectorXd positions;
  VectorXd velocities;
  VectorXd rest_positions;
  std::map<NodeIndex, Vec2> grasp_targets;
  /// Per-element corotation angle from the last force evaluation; reused when
  /// an element is inverted.
  std::vector<double> element_angles;
  double time = 0.0;

  Vec2 position(NodeIndex n) const { return positions.segment<2>(2 * n); }
  Vec2 rest_position(NodeIndex n) const { return rest_positions.segment<2>(2 * n); }
};

struct StepReport {
  int cg_iterations_used = 0;
  bool converged = true;
  double residual = 0.0;
  int inverted_elements = 0;
};

/// Thrown when a step produces non-finite values. Carries the last finite state.
class SimulationDiverged : public Error {
public:
  SimulationDiverged(const std::string& what, SimState last)
      : Error(what), last_state_(std::make_shared<SimState>(std::move(last))) {}
  const SimState& last_state() const { return *last_state_; }

private:
  std::shared_ptr<const SimState> last_state_;
};

inline SimState make_rest_state(const TissueMesh& mesh) {
  SimState s;
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  s.rest_positions.resize(2 * n);
  for (Eigen::Index k = 0; k < n; ++k) s.rest_positions.segment<2>(2 * k) = mesh.node_positions[k];
  s.positions = s.rest_positions;
  s.velocities = VectorXd::Zero(2 * n);
  s.element_angles.assign(mesh.triangles.size(), 0.0);
  return s;
}

/// Plane-stress elasticity matrix for Voigt strain (exx, eyy, gxy).
inline Eigen::Matrix3d plane_stress_elasticity(double young, double poisson) {
  Eigen::Matrix3d d;
  const double c = young / (1.0 - poisson * poisson);
  d << c, c * poisson, 0.0,
       c * poisson, c, 0.0,
       0.0, 0.0, c * 0.5 * (1.0 - poisson);
  return d;
}

inline Mat2 rotation(double angle) {
  Mat2 r;
  const double c = std::cos(angle), s = std::sin(angle);
  r << c, -s, s, c;
  return r;
}

/// Tangent stiffness of the tissue, stored per element in the rotated frame.
/// Applies K u (K = -dF_int/dx, symmetric positive semi-definite).
class TangentStiffness {
public:
  void apply(const VectorXd& u, VectorXd& out) const {
    out.setZero(u.size());
    Vec6 ue;
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      const auto& t = (*triangles_)[e];
      for (int a = 0; a < 3; ++a) ue.segment<2>(2 * a) = u.segment<2>(2 * t[a]);
      const Vec6 fe = elements_[e] * ue;
      for (int a = 0; a < 3; ++a) out.segment<2>(2 * t[a]) += fe.segment<2>(2 * a);
    }
  }

  VectorXd operator*(const VectorXd& u) const {
    VectorXd out;
    apply(u, out);
    return out;
  }

private:
  friend class ElasticModel;
  const std::vector<Triangle>* triangles_ = nullptr;
  std::vector<Mat6> elements_;
};

struct InternalForces {
  VectorXd forces;
  TangentStiffness stiffness;
  std::vector<double> element_angles;
  int inverted_elements = 0;
};

/// Corotational linear triangles over a mesh. Holds the rest-shape data that
/// does not change while stepping; the Young's modulus may be swapped.
class ElasticModel {
public:
  ElasticModel(std::shared_ptr<const TissueMesh> mesh, MaterialParams material)
      : mesh_(std::move(mesh)), material_(material) {
    material_.validate();
    const auto& m = *mesh_;
    const auto n = static_cast<Eigen::Index>(m.node_count());
    lumped_mass_ = VectorXd::Zero(2 * n);
    free_mask_ = VectorXd::Ones(2 * n);
    for (NodeIndex f : m.fixed_nodes) free_mask_.segment<2>(2 * f).setZero();

    elements_.reserve(m.triangles.size());
    const Eigen::Matrix3d d = plane_stress_elasticity(1.0, material_.poisson_ratio);
    for (const auto& t : m.triangles) {
      const Vec2& x0 = m.node_positions[t[0]];
      const Vec2& x1 = m.node_positions[t[1]];
      const Vec2& x2 = m.node_positions[t[2]];
      Element el;
      Mat2 dm;
      dm.col(0) = x1 - x0;
      dm.col(1) = x2 - x0;
      el.area = signed_area(x0, x1, x2);
      if (!(el.area > 0.0)) throw ConfigurationError("mesh has a degenerate or inverted triangle");
      el.dm_inv = dm.inverse();
      el.rest_edges = dm;
      // Shape-function gradients: rows of Dm^-1 for nodes 1 and 2.
      Eigen::Matrix<double, 3, 2> grad;
      grad.row(1) = el.dm_inv.row(0);
      grad.row(2) = el.dm_inv.row(1);
      grad.row(0) = -grad.row(1) - grad.row(2);
      Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
      for (int a = 0; a < 3; ++a) {
        b(0, 2 * a) = grad(a, 0);
        b(1, 2 * a + 1) = grad(a, 1);
        b(2, 2 * a) = grad(a, 1);
        b(2, 2 * a + 1) = grad(a, 0);
      }
      el.unit_stiffness = material_.thickness * el.area * b.transpose() * d * b;
      elements_.push_back(el);
      const double node_mass = material_.density * el.area / 3.0;
      for (int a = 0; a < 3; ++a) lumped_mass_.segment<2>(2 * t[a]).array() += node_mass;
    }
  }

  const TissueMesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const TissueMesh>& mesh_ptr() const { return mesh_; }
  const MaterialParams& material() const { return material_; }
  const VectorXd& lumped_mass() const { return lumped_mass_; }
  /// 1 on free DOFs, 0 on DOFs of fixed nodes.
  const VectorXd& free_mask() const { return free_mask_; }

  void set_young_modulus(double young) {
    if (!(young > 0.0)) throw ParameterError("young_modulus must be > 0");
    material_.young_modulus = young;
  }

  /// Linear (non-rotated) element stiffness at the current modulus.
  Mat6 element_stiffness(std::size_t e) const {
    return material_.young_modulus * elements_[e].unit_stiffness;
  }

  InternalForces internal_forces(const SimState& state) const {
    const auto& m = *mesh_;
    InternalForces out;
    out.forces = VectorXd::Zero(state.positions.size());
    out.element_angles.resize(elements_.size());
    out.stiffness.triangles_ = &m.triangles;
    out.stiffness.elements_.resize(elements_.size());
    const double young = material_.young_modulus;

    for (std::size_t e = 0; e < elements_.size(); ++e) {
      const auto& t = m.triangles[e];
      const Element& el = elements_[e];
      const Vec2 x0 = state.positions.segment<2>(2 * t[0]);
      Mat2 ds;
      ds.col(0) = state.positions.segment<2>(2 * t[1]) - x0;
      ds.col(1) = state.positions.segment<2>(2 * t[2]) - x0;
      const Mat2 f = ds * el.dm_inv;

      double angle;
      if (ds == el.rest_edges) {
        angle = 0.0;
      } else if (f.determinant() <= 0.0) {
        ++out.inverted_elements;
        angle = e < state.element_angles.size() ? state.element_angles[e] : 0.0;
      } else {
        angle = std::atan2(f(1, 0) - f(0, 1), f(0, 0) + f(1, 1));
      }
      out.element_angles[e] = angle;
      const Mat2 r = rotation(angle);

      // Displacement in the element frame, measured relative to node 0.
      Vec6 local = Vec6::Zero();
      const Mat2 unrotated = r.transpose() * ds - el.rest_edges;
      local.segment<2>(2) = unrotated.col(0);
      local.segment<2>(4) = unrotated.col(1);

      const Mat6 k = young * el.unit_stiffness;
      const Vec6 f_local = -(k * local);
      Mat6 rb = Mat6::Zero();
      for (int a = 0; a < 3; ++a) rb.block<2, 2>(2 * a, 2 * a) = r;
      const Vec6 f_global = rb * f_local;
      for (int a = 0; a < 3; ++a) out.forces.segment<2>(2 * t[a]) += f_global.segment<2>(2 * a);
      out.stiffness.elements_[e] = rb * k * rb.transpose();
    }
    return out;
  }

private:
  struct Element {
    Mat2 dm_inv;
    Mat2 rest_edges;
    double area = 0.0;
    Mat6 unit_stiffness;
  };

  std::shared_ptr<const TissueMesh> mesh_;
  MaterialParams material_;
  std::vector<Element> elements_;
  VectorXd lumped_mass_;
  VectorXd free_mask_;
};

/// Spring pull k_s (target - x) on every grasped node, zero elsewhere.
inline VectorXd grasp_spring_forces(const SimState& state, const MaterialParams& material) {
  VectorXd f = VectorXd::Zero(state.positions.size());
  for (const auto& [node, target] : state.grasp_targets) {
    f.segment<2>(2 * node) = material.spring_stiffness_ks * (target - state.position(node));
  }
  return f;
}

inline void check_grasp_targets(const SimState& state, const TissueMesh& mesh) {
  for (const auto& [node, target] : state.grasp_targets) {
    if (node < 0 || static_cast<std::size_t>(node) >= mesh.node_count()) {
      throw ConfigurationError("grasp target references a node outside the mesh");
    }
    if (mesh.is_fixed(node)) {
      throw ConfigurationError("grasp target on fixed node " + std::to_string(node));
    }
  }
}

struct CgResult {
  VectorXd x;
  StepReport report;
};

/// Conjugate gradients from x = 0, stopping at ||b - Ax|| / ||b|| <= tol or
/// after max_iter iterations, whichever comes first. The final iterate is
/// returned in both cases.
///
/// `apply_a(p, out)` must write A p into out.
template <typename ApplyA>
CgResult cg_solve(ApplyA&& apply_a, const VectorXd& b, int max_iter, double tol) {
  if (max_iter < 1) throw ParameterError("cg_solve: max_iter must be >= 1");
  CgResult res;
  res.x = VectorXd::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) {
    res.report = {0, true, 0.0, 0};
    return res;
  }
  VectorXd r = b;
  VectorXd p = r;
  VectorXd ap(b.size());
  double rr = r.squaredNorm();
  int it = 0;
  double rel = 1.0;
  bool converged = false;
  while (it < max_iter) {
    apply_a(p, ap);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;  // breakdown: not SPD along p
    const double alpha = rr / pap;
    res.x.noalias() += alpha * p;
    r.noalias() -= alpha * ap;
    ++it;
    const double rr_new = r.squaredNorm();
    rel = std::sqrt(rr_new) / b_norm;
    if (rel <= tol) {
      converged = true;
      break;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  res.report.cg_iterations_used = it;
  res.report.converged = converged;
  res.report.residual = rel;
  return res;
}

/// Applies the backward-Euler system matrix
///   A = (1 + dt a_m) M + (dt a_k + dt^2) K + dt^2 k_s P_grasp
/// restricted to free DOFs.
class ImplicitSystem {
public:
  ImplicitSystem(const ElasticModel& model, const TangentStiffness& k, const SimState& state,
                 double dt)
      : model_(model), k_(k), dt_(dt) {
    const auto& mat = model.material();
    mass_coeff_ = (1.0 + dt * mat.rayleigh_mass) * model.lumped_mass();
    stiff_coeff_ = dt * mat.rayleigh_stiffness + dt * dt;
    spring_diag_ = VectorXd::Zero(state.positions.size());
    for (const auto& [node, target] : state.grasp_targets) {
      spring_diag_.segment<2>(2 * node).setConstant(dt * dt * mat.spring_stiffness_ks);
    }
    mass_coeff_ += spring_diag_;
  }

  void operator()(const VectorXd& u, VectorXd& out) const {
    const VectorXd& mask = model_.free_mask();
    masked_ = u.cwiseProduct(mask);
    k_.apply(masked_, out);
    out *= stiff_coeff_;
    out += mass_coeff_.cwiseProduct(masked_);
    out = out.cwiseProduct(mask);
  }

private:
  const ElasticModel& model_;
  const TangentStiffness& k_;
  double dt_;
  double stiff_coeff_ = 0.0;
  VectorXd mass_coeff_;
  VectorXd spring_diag_;
  mutable VectorXd masked_;
};

/// One backward-Euler substep linearized at the current configuration. The
/// state advances with whatever iterate CG returns, converged or not.
inline std::pair<SimState, StepReport> step(const SimState& state, const ElasticModel& model,
                                            const SolverConfig& cfg) {
  const auto& mat = model.material();
  const double dt = cfg.dt;
  check_grasp_targets(state, model.mesh());
  const InternalForces fi = model.internal_forces(state);
  const VectorXd fg = grasp_spring_forces(state, mat);
  const VectorXd& mask = model.free_mask();
  const VectorXd& mass = model.lumped_mass();

  // Implicit velocity update with f(x + dt v') ~ f(x) - K dt v' and damping -B v':
  //   A dv = dt (f - B v) - dt^2 (K + K_s) v
  VectorXd kv = fi.stiffness * state.velocities;
  VectorXd ks_v = VectorXd::Zero(state.velocities.size());
  for (const auto& [node, target] : state.grasp_targets) {
    ks_v.segment<2>(2 * node) = mat.spring_stiffness_ks * state.velocities.segment<2>(2 * node);
  }
  const VectorXd damping =
      mat.rayleigh_mass * mass.cwiseProduct(state.velocities) + mat.rayleigh_stiffness * kv;
  VectorXd rhs = dt * (fi.forces + fg - damping) - dt * dt * (kv + ks_v);
  rhs = rhs.cwiseProduct(mask);
  if (!rhs.allFinite()) {
    throw SimulationDiverged("non-finite forces at t = " + std::to_string(state.time), state);
  }

  const ImplicitSystem system(model, fi.stiffness, state, dt);
  CgResult solved = cg_solve(system, rhs, cfg.max_cg_iterations, cfg.cg_tolerance);
  solved.report.inverted_elements = fi.inverted_elements;

  SimState next = state;
  next.velocities = (state.velocities + solved.x).cwiseProduct(mask);
  next.positions = state.positions + dt * next.velocities;
  for (NodeIndex f : model.mesh().fixed_nodes) {
    next.positions.segment<2>(2 * f) = state.rest_positions.segment<2>(2 * f);
  }
  next.element_angles = fi.element_angles;
  next.time = state.time + dt;

  if (!next.positions.allFinite() || !next.velocities.allFinite()) {
    throw SimulationDiverged("simulation diverged at t = " + std::to_string(next.time), state);
  }
  return {std::move(next), solved.report};
}

inline double max_nodal_speed(const SimState& state) {
  double best = 0.0;
  for (Eigen::Index k = 0; k + 1 < state.velocities.size(); k += 2) {
    best = std::max(best, state.velocities.segment<2>(k).norm());
  }
  return best;
}

struct SettleResult {
  SimState state;
  int substeps = 0;
};

/// Steps until the nodal speed stays below `velocity_tol` across one more
/// trial step, or `max_substeps` steps were taken. A state that is already at
/// rest and in balance is returned unchanged.
inline SettleResult settle(const SimState& state, const ElasticModel& model,
                           const SolverConfig& cfg, int max_substeps, double velocity_tol) {
  SettleResult out{state, 0};
  while (out.substeps < max_substeps) {
    auto [next, report] = step(out.state, model, cfg);
    (void)report;
    if (max_nodal_speed(out.state) < velocity_tol && max_nodal_speed(next) < velocity_tol) {
      break;
    }
    out.state = std::move(next);
    ++out.substeps;
  }
  return out;
}

inline double kinetic_energy(const SimState& state, const ElasticModel& model) {
  return 0.5 * model.lumped_mass().dot(state.velocities.cwiseAbs2());
}

}  // namespace isp
