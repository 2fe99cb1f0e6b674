#include <algorithm>
#include <cmath>

#include "bmfia/darcy.hpp"
#include "bmfia/error.hpp"
#include "bmfia/markov_prior.hpp"
#include "doctest.h"

using namespace bmfia;

namespace {

Vector smooth_field(const Mesh& mesh, std::uint64_t seed, double delta = 2.0) {
  MarkovPrior prior(mesh, 0.0, 1.0, 1.0, 0.05);
  Rng rng(seed);
  return prior.sample(delta, rng, 1).front();
}

double sum_velocity(const DarcySolver& s, const Vector& x) { return s.solve(x).y.sum(); }

}  // namespace

TEST_CASE("unit permeability stiffness matches a hand assembled reference") {
  // 2x2 elements, unit square elements of size 1/2; the bilinear Laplace
  // stiffness on a square is independent of h.
  Mesh mesh(2, 2);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(2, 2));
  Eigen::MatrixXd a = Eigen::MatrixXd(solver.assemble_stiffness(Vector::Zero(9)));

  const double ke[4][4] = {{4, -1, -2, -1}, {-1, 4, -1, -2}, {-2, -1, 4, -1}, {-1, -2, -1, 4}};
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(9, 9);
  for (int ey = 0; ey < 2; ++ey)
    for (int ex = 0; ex < 2; ++ex) {
      int n[4] = {ey * 3 + ex, ey * 3 + ex + 1, (ey + 1) * 3 + ex + 1, (ey + 1) * 3 + ex};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) ref(n[i], n[j]) += ke[i][j] / 6.0;
    }
  CHECK((a - ref).cwiseAbs().maxCoeff() <= 1e-12);

  auto sys = solver.assemble(Vector::Zero(9));
  REQUIRE(sys.free_nodes.size() == 1);
  CHECK(sys.free_nodes[0] == 4);
  CHECK(Eigen::MatrixXd(sys.a)(0, 0) == doctest::Approx(8.0 / 3.0));
}

TEST_CASE("stiffness scales linearly with constant permeability") {
  Mesh mesh(5, 4);
  DarcySolver solver(mesh, PressureBC(BcKind::lf_moderate), ObservationGrid(3, 3));
  auto a0 = Eigen::MatrixXd(solver.assemble(Vector::Zero(mesh.node_count())).a);
  auto a2 = Eigen::MatrixXd(solver.assemble(Vector::Constant(mesh.node_count(), std::log(2.0))).a);
  CHECK((a2 - 2.0 * a0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("stiffness is symmetric") {
  Mesh mesh(6, 6);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(4, 4));
  auto a = Eigen::MatrixXd(solver.assemble(smooth_field(mesh, 1)).a);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("non-finite field is rejected") {
  Mesh mesh(2, 2);
  DarcySolver solver(mesh, PressureBC(BcKind::lf_bad), ObservationGrid(2, 2));
  Vector x = Vector::Zero(9);
  x[3] = std::nan("");
  CHECK_THROWS_AS(solver.solve(x), InvalidArgument);
  CHECK_THROWS_AS(solver.solve(Vector::Zero(5)), ShapeMismatch);
}

TEST_CASE("boundary conditions") {
  Point2 c{0.3, 0.8};
  CHECK(PressureBC(BcKind::hf_quadratic)(c) == doctest::Approx(1 - 0.09 + 0.09));
  CHECK(PressureBC(BcKind::lf_moderate)(c) == doctest::Approx(1 - 0.3 + 0.3));
  CHECK(PressureBC(BcKind::lf_bad)(c) == doctest::Approx(1 - 0.2));
  CHECK(PressureBC::from_name("lf_bad").kind() == BcKind::lf_bad);
  CHECK_THROWS(PressureBC::from_name("nope"));
}

TEST_CASE("linear boundary data gives the exact uniform velocity") {
  Mesh mesh(8, 8);
  DarcySolver solver(mesh, PressureBC(BcKind::lf_bad), ObservationGrid(7, 5));
  auto sol = solver.solve(Vector::Zero(mesh.node_count()));
  for (int i = 0; i < sol.y.rows(); ++i) {
    CHECK(std::abs(sol.y(i, 0) - 2.0 / 3.0) <= 1e-10);
    CHECK(std::abs(sol.y(i, 1)) <= 1e-10);
  }
}

TEST_CASE("constant permeability scales velocity only") {
  Mesh mesh(8, 8);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(6, 6));
  const double a = 0.7;
  auto s0 = solver.solve(Vector::Zero(mesh.node_count()));
  auto sa = solver.solve(Vector::Constant(mesh.node_count(), a));
  CHECK((sa.pressure - s0.pressure).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((sa.y - std::exp(a) * s0.y).cwiseAbs().maxCoeff() <= 1e-11);
}

TEST_CASE("mirror symmetry about c2 = 1/2") {
  // 6 elements and 10 rows keep every observation off element edges.
  Mesh mesh(6, 6);
  const int rows = 10, cols = 10;
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(rows, cols));
  Vector base = smooth_field(mesh, 3);
  Vector x(mesh.node_count());
  for (int iy = 0; iy <= 6; ++iy)
    for (int ix = 0; ix <= 6; ++ix)
      x[mesh.node_index(ix, iy)] =
          0.5 * (base[mesh.node_index(ix, iy)] + base[mesh.node_index(ix, 6 - iy)]);
  auto sol = solver.solve(x);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int i = r * cols + c;
      int m = (rows - 1 - r) * cols + c;
      CHECK(std::abs(sol.y(i, 1) + sol.y(m, 1)) <= 1e-10);
      CHECK(std::abs(sol.y(i, 0) - sol.y(m, 0)) <= 1e-10);
    }
}

TEST_CASE("adjoint matches central differences") {
  Mesh mesh(8, 8);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(10, 10));
  for (int k = 0; k < 10; ++k) {
    Vector x = smooth_field(mesh, 50 + k);
    auto sol = solver.solve(x);
    VelocityMatrix seed = VelocityMatrix::Ones(sol.y.rows(), 2);
    Vector g = solver.adjoint(sol, seed);
    Vector fd(x.size());
    const double h = 1e-6;
    for (int i = 0; i < x.size(); ++i) {
      Vector xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (sum_velocity(solver, xp) - sum_velocity(solver, xm)) / (2 * h);
    }
    CHECK((fd - g).norm() <= 1e-5 * g.norm());
  }
}

TEST_CASE("adjoint with a coarser field mesh") {
  Mesh field(4, 4);
  DarcySolver solver(Mesh(8, 8), PressureBC(BcKind::hf_quadratic), ObservationGrid(6, 6), field);
  Vector x = smooth_field(field, 9);
  auto sol = solver.solve(x);
  VelocityMatrix seed = VelocityMatrix::Ones(sol.y.rows(), 2);
  Vector g = solver.adjoint(sol, seed);
  Vector fd(x.size());
  const double h = 1e-6;
  for (int i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (sum_velocity(solver, xp) - sum_velocity(solver, xm)) / (2 * h);
  }
  CHECK((fd - g).norm() <= 1e-5 * g.norm());
}

TEST_CASE("adjoint is linear in the seed") {
  Mesh mesh(6, 6);
  DarcySolver solver(mesh, PressureBC(BcKind::lf_moderate), ObservationGrid(5, 5));
  auto sol = solver.solve(smooth_field(mesh, 2));
  Rng rng(4);
  VelocityMatrix v1(25, 2), v2(25, 2);
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 2; ++j) {
      v1(i, j) = standard_normal(1, rng)[0];
      v2(i, j) = standard_normal(1, rng)[0];
    }
  Vector g12 = solver.adjoint(sol, v1 + v2);
  Vector g1 = solver.adjoint(sol, v1);
  Vector g2 = solver.adjoint(sol, v2);
  CHECK((g12 - g1 - g2).norm() <= 1e-12 * std::max(1.0, g12.norm()));
  CHECK(solver.adjoint(sol, VelocityMatrix::Zero(25, 2)).norm() == 0.0);
  CHECK_THROWS_AS(solver.adjoint(sol, VelocityMatrix::Zero(3, 2)), ShapeMismatch);
}

TEST_CASE("discrete maximum principle") {
  Mesh mesh(12, 12);
  for (auto kind : {BcKind::hf_quadratic, BcKind::lf_moderate, BcKind::lf_bad}) {
    PressureBC bc(kind);
    DarcySolver solver(mesh, bc, ObservationGrid(4, 4));
    auto sol = solver.solve(smooth_field(mesh, 7));
    double gmin = 1e300, gmax = -1e300;
    for (int n = 0; n < mesh.node_count(); ++n)
      if (mesh.is_boundary_node(n)) {
        gmin = std::min(gmin, bc(mesh.node_coord(n)));
        gmax = std::max(gmax, bc(mesh.node_coord(n)));
      }
    CHECK(sol.pressure.minCoeff() >= gmin - 1e-8);
    CHECK(sol.pressure.maxCoeff() <= gmax + 1e-8);
  }
}

TEST_CASE("refinement reduces the velocity change") {
  ObservationGrid grid(20, 20);
  PressureBC bc(BcKind::hf_quadratic);
  auto y = [&](int n) {
    DarcySolver s(Mesh(n, n), bc, grid);
    return s.solve(Vector::Zero((n + 1) * (n + 1))).y;
  };
  auto y16 = y(16), y32 = y(32), y64 = y(64);
  CHECK((y64 - y32).norm() < (y32 - y16).norm());
}

TEST_CASE("solves are deterministic and counted") {
  Mesh mesh(8, 8);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(5, 5));
  Vector x = smooth_field(mesh, 12);
  auto a = solver.solve(x);
  auto b = solver.solve(x);
  CHECK(a.y == b.y);
  CHECK(solver.calls() == 2);
  solver.reset_calls();
  CHECK(solver.calls() == 0);
}
