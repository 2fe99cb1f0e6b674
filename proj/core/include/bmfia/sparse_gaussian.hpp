#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "bmfia/types.hpp"

namespace bmfia {

/// Gaussian q(x) = N(mu, L L^T) with a banded lower-triangular factor L.
/// Band storage: raw(i, k) holds L(i, i - k) for k = 0..w; the diagonal
/// column k = 0 stores log L(i, i). Slots with i - k < 0 are kept at zero.
class SparseGaussian {
 public:
  SparseGaussian() = default;
  SparseGaussian(Vector mu, int bandwidth, double init_std = 0.1);

  int dim() const { return static_cast<int>(mu_.size()); }
  int bandwidth() const { return w_; }
  const Vector& mu() const { return mu_; }
  Vector& mu() { return mu_; }
  const Matrix& band() const { return raw_; }
  Matrix& band() { return raw_; }

  double diag(int i) const { return std::exp(raw_(i, 0)); }
  double logdiag_mean() const { return raw_.col(0).mean(); }

  /// L r.
  Vector apply_factor(const Vector& r) const;

  struct Draws {
    std::vector<Vector> xs;
    std::vector<Vector> rs;
  };
  Draws sample(int n_samples, Rng& rng) const;
  Draws sample(int n_samples, std::uint64_t seed) const;

  /// H = n/2 log(2 pi e) + sum log L_ii.
  double entropy() const;

  /// Number of variational parameters: mu followed by the row-major band.
  std::size_t param_count() const;
  std::vector<double> flat() const;
  void set_flat(const std::vector<double>& phi);

  /// ELBO gradient w.r.t. the flat parameters from pathwise samples,
  /// including the entropy term.
  std::vector<double> elbo_grad(const std::vector<Vector>& rs,
                                const std::vector<Vector>& grads) const;

  Matrix dense_factor() const;
  Matrix dense_covariance() const;
  /// Marginal standard deviations sqrt(diag(L L^T)).
  Vector marginal_std() const;

  /// Zero out-of-range band slots (rows i < k).
  void enforce_band();

  void save(const std::filesystem::path& path) const;
  static SparseGaussian load(const std::filesystem::path& path);

 private:
  Vector mu_;
  int w_ = 0;
  Matrix raw_;
};

/// KL(N(m0, S0) || N(m1, S1)) for dense covariances.
double gaussian_kl(const Vector& m0, const Matrix& s0, const Vector& m1, const Matrix& s1);

}  // namespace bmfia
