#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bmfia/error.hpp"
#include "bmfia/optimizer.hpp"
#include "bmfia/types.hpp"

namespace bmfia {

/// Observation data and settings for the marginalized Gaussian likelihood.
struct MFLikelihood {
  Matrix y_obs;  // n x 2
  double a0 = 1e-9;
  double b0 = 1e-9;
  double clip_threshold = 1e3;

  void validate() const;
};

/// Log-normal q(tau): log tau ~ N(mu_tau, exp(log_sigma_tau)^2).
struct TauVariational {
  double mu_tau = 0.0;
  double log_sigma_tau = std::log(0.5);

  double sigma() const { return std::exp(log_sigma_tau); }
  /// E_q[tau] = exp(mu + sigma^2 / 2).
  double mean() const { return std::exp(mu_tau + 0.5 * sigma() * sigma()); }
};

/// Sum over entries of log N(y | M, 1/tau + V).
double mf_loglik(const Matrix& m, const Matrix& v, const Matrix& y_obs, double tau);

struct MfGrads {
  Matrix dm;
  Matrix dv;
  double dtau = 0.0;
  double value = 0.0;
};
MfGrads mf_loglik_grads(const Matrix& m, const Matrix& v, const Matrix& y_obs, double tau);

/// One (M, V) pair entering a batch-averaged tau objective.
struct MfBlock {
  Matrix mean;
  Matrix variance;
};

struct VbemConfig {
  int steps = 50;
  int n_tau = 10;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-2};
};

struct VbemResult {
  TauVariational phi;
  std::vector<double> tau_samples;
  std::vector<double> elbo_trace;
};

/// Raised when the tau ELBO turns non-finite; carries the trace so far.
class TauDivergence : public NumericalError {
 public:
  TauDivergence(const std::string& what, std::vector<double> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Reparameterized SVI on q(tau) maximizing
/// mean_b E_q[L_MF(M_b, V_b, tau) + log Gamma(tau | a0, b0)] + H[q(tau)].
/// Returns the final parameters and a fresh set of n_tau samples.
VbemResult vbem_tau(const std::vector<MfBlock>& blocks, const Matrix& y_obs, double a0, double b0,
                    const TauVariational& phi0, const VbemConfig& cfg, std::uint64_t seed);
VbemResult vbem_tau(const Matrix& m, const Matrix& v, const Matrix& y_obs, double a0, double b0,
                    const TauVariational& phi0, const VbemConfig& cfg, std::uint64_t seed);

/// Start value: mu = log of the empirical precision of `residual`, sigma = 0.5.
TauVariational tau_init_from_residual(const Matrix& residual);

/// mf_loglik and its (dM, dV) gradients averaged over tau samples.
struct MarginalizedGrads {
  Matrix dm;
  Matrix dv;
  double loglik = 0.0;
};
MarginalizedGrads marginalized_grads(const Matrix& m, const Matrix& v, const Matrix& y_obs,
                                     const std::vector<double>& tau_samples);

/// Global-norm clipping. Returns true if the gradient was rescaled.
bool clip_gradient(Eigen::Ref<Vector> g, double threshold);
bool clip_gradient(Matrix& g, double threshold);

/// log N(y_obs | y_model, I / tau) and its gradient w.r.t. y_model.
struct HfLoglik {
  double value = 0.0;
  Matrix grad;
};
HfLoglik hf_loglik(const Matrix& y_model, const Matrix& y_obs, double tau);

}  // namespace bmfia
