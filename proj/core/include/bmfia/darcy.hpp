#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bmfia/mesh.hpp"
#include "bmfia/types.hpp"

namespace bmfia {

enum class BcKind { hf_quadratic, lf_moderate, lf_bad, custom };

/// Dirichlet pressure g(c) prescribed on the whole boundary.
class PressureBC {
 public:
  explicit PressureBC(BcKind kind);
  explicit PressureBC(std::function<double(const Point2&)> custom);

  static PressureBC from_name(const std::string& name);

  BcKind kind() const { return kind_; }
  std::string name() const;
  double operator()(const Point2& c) const;

 private:
  BcKind kind_;
  std::function<double(const Point2&)> custom_;
};

/// Free-DoF system A p_f = b after eliminating the Dirichlet nodes.
struct LinearSystem {
  SparseMatrix a;
  Vector b;
  /// Node index of every free DoF, in system order.
  std::vector<int> free_nodes;
  /// Full nodal vector holding g on boundary nodes and zero elsewhere.
  Vector dirichlet;
};

namespace detail {
struct ForwardState;
}

struct DarcySolution {
  /// Nodal pressure on the solver mesh (boundary values included).
  Vector pressure;
  /// Velocity -k grad p at the observation coordinates, one row per point.
  VelocityMatrix y;
  /// Factorization and intermediates reused by the adjoint.
  std::shared_ptr<const detail::ForwardState> state;
};

/// Steady Darcy flow -div(exp(x~) grad p) = 0 with bilinear elements.
///
/// The log-permeability field x~ is parameterized by nodal values on
/// `field_mesh`; the solve happens on `solver_mesh`. Element permeability is
/// exp(x~) evaluated at the solver element midpoint. Velocities are reported
/// at the observation grid as -exp(x~(c)) grad p(c).
///
/// `solve` and `adjoint` are const and may be called concurrently.
class DarcySolver {
 public:
  DarcySolver(Mesh solver_mesh, PressureBC bc, ObservationGrid grid, Mesh field_mesh);
  /// Field and solver share the same mesh.
  DarcySolver(Mesh mesh, PressureBC bc, ObservationGrid grid);

  const Mesh& solver_mesh() const { return mesh_; }
  const Mesh& field_mesh() const { return field_mesh_; }
  const ObservationGrid& grid() const { return grid_; }
  const PressureBC& bc() const { return bc_; }
  const FieldInterpolator& observation_interpolator() const { return obs_interp_; }

  /// Full stiffness matrix over all solver nodes for element permeabilities
  /// exp(x~(midpoint)).
  SparseMatrix assemble_stiffness(const Vector& x) const;
  LinearSystem assemble(const Vector& x) const;

  DarcySolution solve(const Vector& x) const;

  /// Gradient dJ/dx of a functional J(Y) given dJ/dY, through both the
  /// explicit permeability factor and the pressure solve.
  Vector adjoint(const DarcySolution& solution, const VelocityMatrix& dj_dy) const;

  /// Number of forward solves performed by this instance.
  long calls() const { return calls_.load(); }
  void reset_calls() { calls_.store(0); }

 private:
  Vector element_log_permeability(const Vector& x) const;
  void check_field(const Vector& x) const;

  Mesh mesh_;
  Mesh field_mesh_;
  PressureBC bc_;
  ObservationGrid grid_;
  FieldInterpolator mid_interp_;
  FieldInterpolator obs_interp_;
  std::vector<Mesh::Location> obs_locations_;
  std::vector<int> free_index_;
  std::vector<int> free_nodes_;
  Vector dirichlet_;
  std::array<std::array<double, 4>, 4> ref_stiffness_{};
  mutable std::atomic<long> calls_{0};
};

/// Reference element stiffness for unit permeability on an hx x hy
/// rectangle (2x2 Gauss quadrature).
std::array<std::array<double, 4>, 4> reference_stiffness(double hx, double hy);

}  // namespace bmfia
