#include "bmfia/darcy.hpp"

#include <cmath>
#include <utility>

#include <Eigen/SparseCholesky>

#include "bmfia/error.hpp"

namespace bmfia {

namespace detail {
struct ForwardState {
  using Cholesky = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;
  Cholesky chol;
  Vector element_k;
  Vector obs_k;
};
}  // namespace detail

PressureBC::PressureBC(BcKind kind) : kind_(kind) {
  if (kind == BcKind::custom) throw InvalidArgument("custom boundary condition needs a function");
}

PressureBC::PressureBC(std::function<double(const Point2&)> custom)
    : kind_(BcKind::custom), custom_(std::move(custom)) {}

PressureBC PressureBC::from_name(const std::string& name) {
  if (name == "hf_quadratic") return PressureBC(BcKind::hf_quadratic);
  if (name == "lf_moderate") return PressureBC(BcKind::lf_moderate);
  if (name == "lf_bad") return PressureBC(BcKind::lf_bad);
  throw InvalidArgument("unknown boundary condition '" + name + "'");
}

std::string PressureBC::name() const {
  switch (kind_) {
    case BcKind::hf_quadratic: return "hf_quadratic";
    case BcKind::lf_moderate: return "lf_moderate";
    case BcKind::lf_bad: return "lf_bad";
    case BcKind::custom: return "custom";
  }
  return "custom";
}

double PressureBC::operator()(const Point2& c) const {
  switch (kind_) {
    case BcKind::hf_quadratic: return 1.0 - c.c1 * c.c1 + (c.c2 - 0.5) * (c.c2 - 0.5);
    case BcKind::lf_moderate: return 1.0 - c.c1 + std::abs(c.c2 - 0.5);
    case BcKind::lf_bad: return 1.0 - 2.0 / 3.0 * c.c1;
    case BcKind::custom: return custom_(c);
  }
  return 0.0;
}

std::array<std::array<double, 4>, 4> reference_stiffness(double hx, double hy) {
  std::array<std::array<double, 4>, 4> k{};
  const double g = 0.5 / std::sqrt(3.0);
  const double pts[2] = {0.5 - g, 0.5 + g};
  const double weight = 0.25 * hx * hy;
  for (double xi : pts) {
    for (double eta : pts) {
      const auto grads = shape_gradients(xi, eta, hx, hy);
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          k[a][b] += weight * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
        }
      }
    }
  }
  return k;
}

namespace {
std::vector<Point2> element_centers(const Mesh& mesh) {
  std::vector<Point2> centers;
  centers.reserve(static_cast<std::size_t>(mesh.element_count()));
  for (int e = 0; e < mesh.element_count(); ++e) centers.push_back(mesh.element_center(e));
  return centers;
}
}  // namespace

DarcySolver::DarcySolver(Mesh solver_mesh, PressureBC bc, ObservationGrid grid, Mesh field_mesh)
    : mesh_(solver_mesh),
      field_mesh_(field_mesh),
      bc_(std::move(bc)),
      grid_(std::move(grid)),
      mid_interp_(field_mesh, element_centers(solver_mesh)),
      obs_interp_(field_mesh, grid_) {
  obs_locations_.reserve(static_cast<std::size_t>(grid_.size()));
  for (const auto& c : grid_.coords()) obs_locations_.push_back(mesh_.locate(c));

  const int n = mesh_.node_count();
  free_index_.assign(static_cast<std::size_t>(n), -1);
  dirichlet_ = Vector::Zero(n);
  for (int node = 0; node < n; ++node) {
    if (mesh_.is_boundary_node(node)) {
      dirichlet_[node] = bc_(mesh_.node_coord(node));
    } else {
      free_index_[static_cast<std::size_t>(node)] = static_cast<int>(free_nodes_.size());
      free_nodes_.push_back(node);
    }
  }
  ref_stiffness_ = reference_stiffness(mesh_.hx(), mesh_.hy());
}

DarcySolver::DarcySolver(Mesh mesh, PressureBC bc, ObservationGrid grid)
    : DarcySolver(mesh, std::move(bc), std::move(grid), mesh) {}

void DarcySolver::check_field(const Vector& x) const {
  if (x.size() != field_mesh_.node_count()) {
    throw ShapeMismatch("field vector has " + std::to_string(x.size()) + " entries, field mesh has " +
                        std::to_string(field_mesh_.node_count()) + " nodes");
  }
  if (!x.allFinite()) throw InvalidArgument("field vector contains non-finite entries");
}

Vector DarcySolver::element_log_permeability(const Vector& x) const {
  return mid_interp_.apply(x);
}

SparseMatrix DarcySolver::assemble_stiffness(const Vector& x) const {
  check_field(x);
  const Vector k = element_log_permeability(x).array().exp();
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh_.element_count()) * 16);
  for (int e = 0; e < mesh_.element_count(); ++e) {
    const auto nodes = mesh_.element_nodes(e);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        triplets.emplace_back(nodes[a], nodes[b], k[e] * ref_stiffness_[a][b]);
      }
    }
  }
  SparseMatrix kmat(mesh_.node_count(), mesh_.node_count());
  kmat.setFromTriplets(triplets.begin(), triplets.end());
  return kmat;
}

LinearSystem DarcySolver::assemble(const Vector& x) const {
  check_field(x);
  const Vector k = element_log_permeability(x).array().exp();
  const int nf = static_cast<int>(free_nodes_.size());
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh_.element_count()) * 16);
  Vector b = Vector::Zero(nf);
  for (int e = 0; e < mesh_.element_count(); ++e) {
    const auto nodes = mesh_.element_nodes(e);
    for (int a = 0; a < 4; ++a) {
      const int ia = free_index_[static_cast<std::size_t>(nodes[a])];
      if (ia < 0) continue;
      for (int bb = 0; bb < 4; ++bb) {
        const double v = k[e] * ref_stiffness_[a][bb];
        const int ib = free_index_[static_cast<std::size_t>(nodes[bb])];
        if (ib >= 0) {
          triplets.emplace_back(ia, ib, v);
        } else {
          b[ia] -= v * dirichlet_[nodes[bb]];
        }
      }
    }
  }
  LinearSystem sys;
  sys.a.resize(nf, nf);
  sys.a.setFromTriplets(triplets.begin(), triplets.end());
  sys.a.makeCompressed();
  sys.b = std::move(b);
  sys.free_nodes = free_nodes_;
  sys.dirichlet = dirichlet_;
  return sys;
}

DarcySolution DarcySolver::solve(const Vector& x) const {
  calls_.fetch_add(1);
  LinearSystem sys = assemble(x);

  auto state = std::make_shared<detail::ForwardState>();
  state->element_k = element_log_permeability(x).array().exp();
  state->obs_k = obs_interp_.apply(x).array().exp();

  DarcySolution sol;
  sol.pressure = dirichlet_;
  if (!sys.free_nodes.empty()) {
    state->chol.compute(sys.a);
    if (state->chol.info() != Eigen::Success) {
      throw SolverError("Darcy stiffness factorization failed (" + std::to_string(sys.a.rows()) +
                        " free DoFs, min element k " + std::to_string(state->element_k.minCoeff()) +
                        ")");
    }
    const Vector pf = state->chol.solve(sys.b);
    if (!pf.allFinite()) throw SolverError("Darcy pressure solve produced non-finite values");
    for (std::size_t i = 0; i < sys.free_nodes.size(); ++i) {
      sol.pressure[sys.free_nodes[i]] = pf[static_cast<Eigen::Index>(i)];
    }
  }

  const int n_obs = grid_.size();
  sol.y.resize(n_obs, 2);
  for (int i = 0; i < n_obs; ++i) {
    const auto& loc = obs_locations_[static_cast<std::size_t>(i)];
    const auto nodes = mesh_.element_nodes(loc.element);
    const auto grads = shape_gradients(loc.xi, loc.eta, mesh_.hx(), mesh_.hy());
    double g1 = 0.0;
    double g2 = 0.0;
    for (int a = 0; a < 4; ++a) {
      g1 += grads[a][0] * sol.pressure[nodes[a]];
      g2 += grads[a][1] * sol.pressure[nodes[a]];
    }
    sol.y(i, 0) = -state->obs_k[i] * g1;
    sol.y(i, 1) = -state->obs_k[i] * g2;
  }
  sol.state = std::move(state);
  return sol;
}

Vector DarcySolver::adjoint(const DarcySolution& solution, const VelocityMatrix& dj_dy) const {
  if (dj_dy.rows() != grid_.size()) {
    throw ShapeMismatch("adjoint seed has " + std::to_string(dj_dy.rows()) + " rows, expected " +
                        std::to_string(grid_.size()));
  }
  if (!solution.state) throw InvalidArgument("adjoint needs a forward solution with state");
  const auto& st = *solution.state;
  const int n_obs = grid_.size();

  // Explicit path: Y_i = -exp(X_i) grad p, so dY_i/dX_i = Y_i.
  Vector dj_dobs(n_obs);
  for (int i = 0; i < n_obs; ++i) {
    dj_dobs[i] = dj_dy(i, 0) * solution.y(i, 0) + dj_dy(i, 1) * solution.y(i, 1);
  }
  Vector grad = obs_interp_.adjoint(dj_dobs);

  // Implicit path through the pressure solve.
  const int nf = static_cast<int>(free_nodes_.size());
  if (nf == 0) return grad;
  Vector rhs = Vector::Zero(nf);
  for (int i = 0; i < n_obs; ++i) {
    const auto& loc = obs_locations_[static_cast<std::size_t>(i)];
    const auto nodes = mesh_.element_nodes(loc.element);
    const auto grads = shape_gradients(loc.xi, loc.eta, mesh_.hx(), mesh_.hy());
    for (int a = 0; a < 4; ++a) {
      const int ia = free_index_[static_cast<std::size_t>(nodes[a])];
      if (ia < 0) continue;
      rhs[ia] -= st.obs_k[i] * (grads[a][0] * dj_dy(i, 0) + grads[a][1] * dj_dy(i, 1));
    }
  }
  const Vector lambda = st.chol.solve(rhs);

  Vector dj_dk = Vector::Zero(mesh_.element_count());
  for (int e = 0; e < mesh_.element_count(); ++e) {
    const auto nodes = mesh_.element_nodes(e);
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
      const int ia = free_index_[static_cast<std::size_t>(nodes[a])];
      if (ia < 0) continue;
      double kp = 0.0;
      for (int b = 0; b < 4; ++b) kp += ref_stiffness_[a][b] * solution.pressure[nodes[b]];
      acc += lambda[ia] * kp;
    }
    dj_dk[e] = -acc * st.element_k[e];
  }
  grad += mid_interp_.adjoint(dj_dk);
  return grad;
}

}  // namespace bmfia
