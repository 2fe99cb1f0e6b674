#pragma once

#include <memory>
#include <vector>

#include <Eigen/SparseCholesky>

#include "bmfia/mesh.hpp"
#include "bmfia/types.hpp"

namespace bmfia {

/// Regularized graph Laplacian of the mesh node adjacency graph: degree on
/// the diagonal, -1 per edge, plus eps_reg on the diagonal. With `periodic`
/// the lattice wraps around in both directions.
SparseMatrix build_laplacian(const Mesh& mesh, double eps_reg, bool periodic = false);

/// Gamma(shape, rate) distribution for a precision hyper-parameter.
struct GammaPosterior {
  double shape;
  double rate;
  double mean() const { return shape / rate; }
  /// E[log delta] = digamma(shape) - log(rate).
  double mean_log() const;
};

/// Hierarchical Gaussian Markov random-field prior
/// x | delta ~ N(mu0, (delta P)^-1), delta ~ Gamma(a0, b0).
class MarkovPrior {
 public:
  static constexpr double kRateFloor = 1e-12;

  MarkovPrior(SparseMatrix precision, Vector mean, double a0, double b0);
  MarkovPrior(const Mesh& mesh, double mean, double a0, double b0, double eps_reg = 1e-6,
              bool periodic = false);

  int dim() const { return static_cast<int>(mean_.size()); }
  const SparseMatrix& precision() const { return p_; }
  const Vector& mean() const { return mean_; }
  double a0() const { return a0_; }
  double b0() const { return b0_; }

  /// (x - mu0)^T P (x - mu0).
  double quadratic_form(const Vector& x) const;

  /// log N(x | mu0, (delta P)^-1) including the normalization constant.
  double log_density(const Vector& x, double delta) const;

  /// Draw `count` samples via x = mu0 + delta^(-1/2) L^-T z with P = L L^T.
  std::vector<Vector> sample(double delta, Rng& rng, int count) const;

  /// Conjugate update: shape a0 + dim/2, rate b0 + quad/2 (rate floored).
  GammaPosterior delta_posterior(const Vector& x) const;
  GammaPosterior delta_posterior_from_quadratic(double quad) const;

  /// EM prior term with the E-step frozen at `expected_delta`:
  /// value = -E[delta]/2 * quad (+ dim/2 * E[log delta]), grad = -E[delta] P (x - mu0).
  struct EmTerm {
    double value;
    Vector grad;
  };
  EmTerm log_prior_frozen(const Vector& x, const GammaPosterior& e_step) const;

  /// E-step from x itself followed by the M-step term.
  EmTerm log_prior_em(const Vector& x) const;

 private:
  using Cholesky =
      Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>>;
  const Cholesky& factor() const;

  SparseMatrix p_;
  Vector mean_;
  double a0_;
  double b0_;
  std::shared_ptr<Cholesky> chol_;
  double log_det_p_ = 0.0;
};

}  // namespace bmfia
