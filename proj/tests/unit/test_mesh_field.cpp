#include <cmath>
#include <filesystem>

#include <Eigen/Eigenvalues>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"
#include "bmfia/markov_prior.hpp"
#include "bmfia/mesh.hpp"
#include "doctest.h"

using namespace bmfia;

namespace {

Eigen::MatrixXd dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }

Vector random_vector(int n, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(n, rng);
}

}  // namespace

TEST_CASE("mesh layout") {
  Mesh mesh(4, 3);
  CHECK(mesh.node_count() == 20);
  CHECK(mesh.element_count() == 12);
  for (int e = 0; e < mesh.element_count(); ++e) {
    auto nodes = mesh.element_nodes(e);
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) CHECK(nodes[a] != nodes[b]);
  }
  for (int n = 0; n < mesh.node_count(); ++n) {
    auto c = mesh.node_coord(n);
    CHECK(c.c1 >= 0.0);
    CHECK(c.c1 <= 1.0);
    CHECK(c.c2 >= 0.0);
    CHECK(c.c2 <= 1.0);
  }
  auto c = mesh.node_coord(mesh.node_index(2, 1));
  CHECK(c.c1 == doctest::Approx(0.5));
  CHECK(c.c2 == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(Mesh(0, 3), InvalidMesh);
}

TEST_CASE("laplacian of a single element has zero row sums") {
  SparseMatrix p = build_laplacian(Mesh(1, 1), 0.0);
  Eigen::MatrixXd d = dense(p);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(d.row(i).sum()) < 1e-15);
}

TEST_CASE("interior node has degree four plus eps") {
  const double eps = 1e-3;
  Mesh mesh(4, 4);
  SparseMatrix p = build_laplacian(mesh, eps);
  int interior = mesh.node_index(2, 2);
  CHECK(p.coeff(interior, interior) == doctest::Approx(4.0 + eps));
  CHECK(p.coeff(interior, mesh.node_index(1, 2)) == -1.0);
  CHECK(p.coeff(interior, mesh.node_index(1, 1)) == 0.0);
  CHECK(dense(p).isApprox(dense(p).transpose(), 0.0));
}

TEST_CASE("smallest eigenvalue of the regularized laplacian") {
  const double eps = 1e-6;
  Mesh mesh(4, 4);
  Eigen::MatrixXd d = dense(build_laplacian(mesh, eps));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d);
  Eigen::MatrixXd l0 = dense(build_laplacian(mesh, 0.0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es0(l0);
  const double lambda2 = es0.eigenvalues()[1];
  CHECK(es.eigenvalues()[0] >= eps - 1e-12);
  CHECK(es.eigenvalues()[0] <= eps + lambda2);
}

TEST_CASE("periodic laplacian couples opposite edges") {
  Mesh mesh(4, 4);
  SparseMatrix p = build_laplacian(mesh, 0.0, true);
  CHECK(p.coeff(mesh.node_index(0, 2), mesh.node_index(4, 2)) == -1.0);
  Eigen::MatrixXd d = dense(p);
  for (int i = 0; i < d.rows(); ++i) CHECK(std::abs(d.row(i).sum()) < 1e-14);
}

TEST_CASE("interpolation reproduces constants and nodal values") {
  Mesh mesh(5, 4);
  ObservationGrid grid(7, 9);
  Vector x = Vector::Constant(mesh.node_count(), 3.0);
  Vector xs = interpolate_field(x, mesh, grid);
  for (int i = 0; i < xs.size(); ++i) CHECK(std::abs(xs[i] - 3.0) < 1e-14);

  Vector r = random_vector(mesh.node_count(), 3);
  int node = mesh.node_index(2, 1);
  FieldInterpolator at_node(mesh, std::vector<Point2>{mesh.node_coord(node)});
  CHECK(at_node.apply(r)[0] == doctest::Approx(r[node]).epsilon(1e-14));

  auto nodes = mesh.element_nodes(7);
  FieldInterpolator at_center(mesh, std::vector<Point2>{mesh.element_center(7)});
  double mean = 0.25 * (r[nodes[0]] + r[nodes[1]] + r[nodes[2]] + r[nodes[3]]);
  CHECK(at_center.apply(r)[0] == doctest::Approx(mean).epsilon(1e-14));

  CHECK_THROWS_AS(FieldInterpolator(mesh, std::vector<Point2>{{1.2, 0.5}}), OutOfDomain);
}

TEST_CASE("interpolation adjoint identity") {
  Mesh mesh(6, 6);
  ObservationGrid grid(10, 8);
  FieldInterpolator s(mesh, grid);
  for (int k = 0; k < 20; ++k) {
    Vector x = random_vector(mesh.node_count(), 100 + k);
    Vector v = random_vector(grid.size(), 200 + k);
    double lhs = s.apply(x).dot(v);
    double rhs = x.dot(s.adjoint(v));
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
  }
  CHECK(interpolation_adjoint(mesh, grid, Vector::Zero(grid.size())).norm() == 0.0);
  CHECK_THROWS_AS(s.adjoint(Vector::Zero(3)), ShapeMismatch);

  int node = mesh.node_index(3, 2);
  FieldInterpolator single(mesh, std::vector<Point2>{mesh.node_coord(node)});
  Vector e1 = Vector::Ones(1);
  Vector back = single.adjoint(e1);
  CHECK(back[node] == doctest::Approx(1.0));
  CHECK(back.sum() == doctest::Approx(1.0));
}

TEST_CASE("interpolation row sums are one") {
  Mesh mesh(3, 5);
  FieldInterpolator s(mesh, ObservationGrid(11, 6));
  Vector ones = Vector::Ones(mesh.node_count());
  Vector r = s.apply(ones);
  for (int i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - 1.0) < 1e-14);
}

TEST_CASE("prior sample mean is unbiased") {
  Mesh mesh(4, 4);
  MarkovPrior prior(mesh, 0.5, 1.0, 1.0, 0.1);
  Rng rng(11);
  const int n = 10000;
  const double delta = 1.0;
  auto xs = prior.sample(delta, rng, n);
  Vector mean = Vector::Zero(prior.dim());
  for (const auto& x : xs) mean += x;
  mean /= n;
  Eigen::MatrixXd cov = Eigen::MatrixXd(prior.precision()).inverse() / delta;
  for (int i = 0; i < prior.dim(); ++i) {
    double se = std::sqrt(cov(i, i) / n);
    CHECK(std::abs(mean[i] - 0.5) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("prior sample covariance matches the dense inverse") {
  Mesh mesh(4, 4);
  MarkovPrior prior(mesh, 0.0, 1.0, 1.0, 1e-2);
  const double delta = 1e-2;
  Rng rng(5);
  const int n = 50000;
  auto xs = prior.sample(delta, rng, n);
  const int d = prior.dim();
  Eigen::MatrixXd emp = Eigen::MatrixXd::Zero(d, d);
  for (const auto& x : xs) emp += x * x.transpose();
  emp /= n;
  Eigen::MatrixXd ref = (delta * Eigen::MatrixXd(prior.precision())).inverse();
  const double cutoff = 0.1 * ref.cwiseAbs().maxCoeff();
  int checked = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (std::abs(ref(i, j)) > cutoff) {
        CHECK(std::abs(emp(i, j) - ref(i, j)) <= 0.1 * std::abs(ref(i, j)));
        ++checked;
      }
  CHECK(checked > 0);
}

TEST_CASE("prior sampling is deterministic") {
  MarkovPrior prior(Mesh(4, 4), 1.0, 1.0, 1.0);
  Rng a(42), b(42);
  auto xa = prior.sample(2.0, a, 3);
  auto xb = prior.sample(2.0, b, 3);
  for (int i = 0; i < 3; ++i) CHECK(xa[i] == xb[i]);
}

TEST_CASE("log density matches a dense gaussian") {
  Mesh mesh(6, 6);
  MarkovPrior prior(mesh, 0.3, 1.0, 1.0, 0.05);
  const double delta = 3.0;
  Rng rng(8);
  auto xs = prior.sample(delta, rng, 5);
  Eigen::MatrixXd q = delta * Eigen::MatrixXd(prior.precision());
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  double logdet = 0.0;
  for (int i = 0; i < q.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double d = static_cast<double>(q.rows());
  for (const auto& x : xs) {
    Vector r = x - prior.mean();
    double ref = -0.5 * d * std::log(2.0 * M_PI) + 0.5 * logdet - 0.5 * r.dot(q * r);
    CHECK(std::abs(prior.log_density(x, delta) - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("delta posterior conjugate update") {
  // 2x2 nodes on one element: dim 4.
  Mesh mesh(1, 1);
  MarkovPrior prior(mesh, 0.0, 1e-9, 1e-9, 1e-6);
  auto at_mean = prior.delta_posterior(prior.mean());
  CHECK(at_mean.shape == 2.0 + 1e-9);
  CHECK(at_mean.rate == 1e-9);

  auto g = prior.delta_posterior_from_quadratic(2.0);
  CHECK(g.shape == 2.0 + 1e-9);
  CHECK(g.rate == 1e-9 + 1.0);
  CHECK(g.mean() == doctest::Approx(2.0).epsilon(1e-8));

  Vector d = random_vector(4, 9);
  auto g1 = prior.delta_posterior(d);
  auto g2 = prior.delta_posterior(2.0 * d);
  CHECK((g2.rate - 1e-9) == doctest::Approx(4.0 * (g1.rate - 1e-9)).epsilon(1e-12));
  CHECK(g1.rate == 1e-9 + 0.5 * prior.quadratic_form(d));
}

TEST_CASE("delta posterior rate floor") {
  Mesh mesh(1, 1);
  SparseMatrix p = build_laplacian(mesh, 1e-6);
  MarkovPrior prior(p, Vector::Zero(4), 1.0, 1e-20);
  CHECK(prior.delta_posterior(Vector::Zero(4)).rate == MarkovPrior::kRateFloor);
}

TEST_CASE("em prior gradient") {
  Mesh mesh(4, 4);
  MarkovPrior prior(mesh, 0.5, 1e-9, 1e-9, 1e-6);
  Vector x = prior.mean() + random_vector(prior.dim(), 21);
  auto e = prior.delta_posterior(x);

  CHECK(prior.log_prior_frozen(prior.mean(), e).grad.norm() == 0.0);

  auto term = prior.log_prior_frozen(x, e);
  Vector fd(prior.dim());
  const double h = 1e-6;
  for (int i = 0; i < prior.dim(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (prior.log_prior_frozen(xp, e).value - prior.log_prior_frozen(xm, e).value) / (2 * h);
  }
  CHECK((fd - term.grad).norm() <= 1e-6 * term.grad.norm());

  Vector dvec = x - prior.mean();
  Vector g1 = prior.log_prior_frozen(prior.mean() + dvec, e).grad;
  Vector g2 = prior.log_prior_frozen(prior.mean() + 2.0 * dvec, e).grad;
  CHECK((g2 - 2.0 * g1).norm() <= 1e-12 * g2.norm());

  auto em = prior.log_prior_em(x);
  CHECK((em.grad - term.grad).norm() <= 1e-12 * term.grad.norm());
}

TEST_CASE("field csv round trip") {
  Mesh mesh(3, 2);
  Vector x = random_vector(mesh.node_count(), 4);
  auto path = std::filesystem::temp_directory_path() / "bmfia_field_roundtrip.csv";
  io::write_field_csv(path, x, mesh);
  int nx = 0, ny = 0;
  Vector back = io::read_field_csv(path, &nx, &ny);
  CHECK(nx == 3);
  CHECK(ny == 2);
  CHECK(back == x);
  std::filesystem::remove(path);
}
