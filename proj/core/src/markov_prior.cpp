#include "bmfia/markov_prior.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <utility>

#include <boost/math/special_functions/digamma.hpp>

#include "bmfia/error.hpp"

namespace bmfia {

SparseMatrix build_laplacian(const Mesh& mesh, double eps_reg, bool periodic) {
  if (mesh.element_count() <= 0) throw InvalidMesh("mesh has no elements");
  if (!(eps_reg >= 0.0)) throw InvalidArgument("eps_reg must be non-negative");

  const int nx = mesh.n_ele_x();
  const int ny = mesh.n_ele_y();
  std::set<std::pair<int, int>> edges;
  auto add_edge = [&](int a, int b) {
    if (a == b) return;
    edges.emplace(std::min(a, b), std::max(a, b));
  };
  for (int iy = 0; iy <= ny; ++iy) {
    for (int ix = 0; ix <= nx; ++ix) {
      const int node = mesh.node_index(ix, iy);
      if (ix < nx) add_edge(node, mesh.node_index(ix + 1, iy));
      if (iy < ny) add_edge(node, mesh.node_index(ix, iy + 1));
      if (periodic) {
        if (ix == nx) add_edge(node, mesh.node_index(0, iy));
        if (iy == ny) add_edge(node, mesh.node_index(ix, 0));
      }
    }
  }

  const int n = mesh.node_count();
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  std::vector<Triplet> triplets;
  triplets.reserve(edges.size() * 2 + static_cast<std::size_t>(n));
  for (const auto& [a, b] : edges) {
    triplets.emplace_back(a, b, -1.0);
    triplets.emplace_back(b, a, -1.0);
    degree[static_cast<std::size_t>(a)] += 1.0;
    degree[static_cast<std::size_t>(b)] += 1.0;
  }
  for (int i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, degree[static_cast<std::size_t>(i)] + eps_reg);
  }
  SparseMatrix p(n, n);
  p.setFromTriplets(triplets.begin(), triplets.end());
  p.makeCompressed();
  return p;
}

double GammaPosterior::mean_log() const {
  return boost::math::digamma(shape) - std::log(rate);
}

MarkovPrior::MarkovPrior(SparseMatrix precision, Vector mean, double a0, double b0)
    : p_(std::move(precision)), mean_(std::move(mean)), a0_(a0), b0_(b0) {
  if (p_.rows() != p_.cols() || p_.rows() != mean_.size()) {
    throw ShapeMismatch("prior precision and mean dimensions disagree");
  }
  if (!(a0_ > 0.0) || !(b0_ > 0.0)) throw InvalidArgument("Gamma hyper-prior needs a0, b0 > 0");
  chol_ = std::make_shared<Cholesky>(p_);
  if (chol_->info() != Eigen::Success) {
    throw FactorizationError("prior precision matrix is not positive definite");
  }
  log_det_p_ = 2.0 * chol_->matrixL().nestedExpression().diagonal().array().log().sum();
}

MarkovPrior::MarkovPrior(const Mesh& mesh, double mean, double a0, double b0, double eps_reg,
                         bool periodic)
    : MarkovPrior(build_laplacian(mesh, eps_reg, periodic),
                  Vector::Constant(mesh.node_count(), mean), a0, b0) {}

const MarkovPrior::Cholesky& MarkovPrior::factor() const { return *chol_; }

double MarkovPrior::quadratic_form(const Vector& x) const {
  if (x.size() != mean_.size()) throw ShapeMismatch("field dimension does not match the prior");
  const Vector d = x - mean_;
  return d.dot(p_ * d);
}

double MarkovPrior::log_density(const Vector& x, double delta) const {
  if (!(delta > 0.0)) throw InvalidArgument("delta must be positive");
  const double n = static_cast<double>(dim());
  return -0.5 * n * std::log(2.0 * std::numbers::pi) + 0.5 * n * std::log(delta) +
         0.5 * log_det_p_ - 0.5 * delta * quadratic_form(x);
}

std::vector<Vector> MarkovPrior::sample(double delta, Rng& rng, int count) const {
  if (!(delta > 0.0)) throw InvalidArgument("delta must be positive");
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  const double scale = 1.0 / std::sqrt(delta);
  for (int k = 0; k < count; ++k) {
    const Vector z = standard_normal(dim(), rng);
    Vector y = factor().matrixU().solve(z);
    out.push_back(mean_ + scale * y);
  }
  return out;
}

GammaPosterior MarkovPrior::delta_posterior(const Vector& x) const {
  return delta_posterior_from_quadratic(quadratic_form(x));
}

GammaPosterior MarkovPrior::delta_posterior_from_quadratic(double quad) const {
  const double shape = a0_ + 0.5 * static_cast<double>(dim());
  const double rate = std::max(b0_ + 0.5 * quad, kRateFloor);
  return {shape, rate};
}

MarkovPrior::EmTerm MarkovPrior::log_prior_frozen(const Vector& x,
                                                  const GammaPosterior& e_step) const {
  if (x.size() != mean_.size()) throw ShapeMismatch("field dimension does not match the prior");
  const Vector d = x - mean_;
  const Vector pd = p_ * d;
  const double e_delta = e_step.mean();
  EmTerm term;
  term.value = -0.5 * e_delta * d.dot(pd) + 0.5 * static_cast<double>(dim()) * e_step.mean_log();
  term.grad = -e_delta * pd;
  return term;
}

MarkovPrior::EmTerm MarkovPrior::log_prior_em(const Vector& x) const {
  return log_prior_frozen(x, delta_posterior(x));
}

}  // namespace bmfia
