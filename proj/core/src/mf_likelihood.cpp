#include "bmfia/mf_likelihood.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace bmfia {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void check_shapes(const Matrix& m, const Matrix& v, const Matrix& y) {
  if (m.rows() != y.rows() || m.cols() != y.cols() || v.rows() != y.rows() || v.cols() != y.cols()) {
    throw ShapeMismatch("M, V and Y_obs must share a shape");
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw OutOfDomain("noise precision must be positive and finite, got " + std::to_string(tau));
  }
}

double log_gamma_density(double tau, double a, double b) {
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(tau) - b * tau;
}

}  // namespace

void MFLikelihood::validate() const {
  if (!(a0 > 0.0) || !(b0 > 0.0)) throw InvalidArgument("tau prior needs a0, b0 > 0");
  if (!(clip_threshold > 0.0)) throw InvalidArgument("clip threshold must be positive");
  if (y_obs.cols() != 2) throw ShapeMismatch("Y_obs must have two columns");
}

double mf_loglik(const Matrix& m, const Matrix& v, const Matrix& y_obs, double tau) {
  check_shapes(m, v, y_obs);
  check_tau(tau);
  const double inv = 1.0 / tau;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double s = inv + v.data()[i];
    const double r = m.data()[i] - y_obs.data()[i];
    sum += -kHalfLog2Pi - 0.5 * std::log(s) - r * r / (2.0 * s);
  }
  return sum;
}

MfGrads mf_loglik_grads(const Matrix& m, const Matrix& v, const Matrix& y_obs, double tau) {
  check_shapes(m, v, y_obs);
  check_tau(tau);
  const double inv = 1.0 / tau;
  const double inv2 = inv * inv;
  MfGrads g{Matrix(m.rows(), m.cols()), Matrix(m.rows(), m.cols()), 0.0, 0.0};
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double s = inv + v.data()[i];
    const double r = m.data()[i] - y_obs.data()[i];
    const double r2s2 = r * r / (2.0 * s * s);
    g.value += -kHalfLog2Pi - 0.5 * std::log(s) - r * r / (2.0 * s);
    g.dm.data()[i] = -r / s;
    g.dv.data()[i] = -0.5 / s + r2s2;
    g.dtau += 0.5 * inv2 / s - inv2 * r2s2;
  }
  return g;
}

TauVariational tau_init_from_residual(const Matrix& residual) {
  const double ms = residual.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, residual.size()));
  TauVariational phi;
  phi.mu_tau = -std::log(std::max(ms, 1e-300));
  phi.log_sigma_tau = std::log(0.5);
  return phi;
}

VbemResult vbem_tau(const std::vector<MfBlock>& blocks, const Matrix& y_obs, double a0, double b0,
                    const TauVariational& phi0, const VbemConfig& cfg, std::uint64_t seed) {
  if (cfg.steps < 0 || cfg.n_tau < 1) throw InvalidArgument("vbem_tau needs steps >= 0, n_tau >= 1");
  if (blocks.empty()) throw InvalidArgument("vbem_tau needs at least one block");
  for (const auto& b : blocks) check_shapes(b.mean, b.variance, y_obs);

  // Per-entry sufficient data: residual^2 and V for every block.
  const double nb = static_cast<double>(blocks.size());
  Rng rng(seed);
  StochasticOptimizer opt(cfg.optimizer);
  std::vector<double> phi{phi0.mu_tau, phi0.log_sigma_tau};
  VbemResult out;
  std::vector<double> r(static_cast<std::size_t>(cfg.n_tau));
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int step = 0; step < cfg.steps; ++step) {
    const double sigma = std::exp(phi[1]);
    for (auto& ri : r) ri = normal(rng);
    double elbo = 0.0;
    double g_mu = 0.0;
    double g_ls = 0.0;
    for (int j = 0; j < cfg.n_tau; ++j) {
      const double t_log = phi[0] + sigma * r[static_cast<std::size_t>(j)];
      const double tau = std::exp(t_log);
      if (!std::isfinite(tau) || tau <= 0.0) {
        throw TauDivergence("tau VB-EM left the representable range at step " + std::to_string(step),
                            out.elbo_trace);
      }
      double value = 0.0;
      double dtau = 0.0;
      for (const auto& b : blocks) {
        const auto g = mf_loglik_grads(b.mean, b.variance, y_obs, tau);
        value += g.value / nb;
        dtau += g.dtau / nb;
      }
      value += log_gamma_density(tau, a0, b0);
      // d/d(log tau) of [L + log Gamma(tau)].
      const double df = tau * dtau + (a0 - 1.0) - b0 * tau;
      elbo += value / cfg.n_tau;
      g_mu += df / cfg.n_tau;
      g_ls += df * sigma * r[static_cast<std::size_t>(j)] / cfg.n_tau;
    }
    // Entropy of log tau plus the log-Jacobian E[log tau] = mu.
    elbo += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) + phi[1] + phi[0];
    g_mu += 1.0;
    g_ls += 1.0;
    out.elbo_trace.push_back(elbo);
    if (!std::isfinite(elbo) || !std::isfinite(g_mu) || !std::isfinite(g_ls)) {
      throw TauDivergence("tau VB-EM diverged at step " + std::to_string(step), out.elbo_trace);
    }
    const std::vector<double> grad{g_mu, g_ls};
    opt.step(phi, grad, true);
  }

  out.phi.mu_tau = phi[0];
  out.phi.log_sigma_tau = phi[1];
  const double sigma = out.phi.sigma();
  for (int j = 0; j < cfg.n_tau; ++j) out.tau_samples.push_back(std::exp(phi[0] + sigma * normal(rng)));
  return out;
}

VbemResult vbem_tau(const Matrix& m, const Matrix& v, const Matrix& y_obs, double a0, double b0,
                    const TauVariational& phi0, const VbemConfig& cfg, std::uint64_t seed) {
  return vbem_tau(std::vector<MfBlock>{{m, v}}, y_obs, a0, b0, phi0, cfg, seed);
}

MarginalizedGrads marginalized_grads(const Matrix& m, const Matrix& v, const Matrix& y_obs,
                                     const std::vector<double>& tau_samples) {
  if (tau_samples.empty()) throw InvalidArgument("marginalized_grads needs tau samples");
  MarginalizedGrads out{Matrix::Zero(m.rows(), m.cols()), Matrix::Zero(m.rows(), m.cols()), 0.0};
  const double w = 1.0 / static_cast<double>(tau_samples.size());
  for (double tau : tau_samples) {
    const auto g = mf_loglik_grads(m, v, y_obs, tau);
    out.dm += w * g.dm;
    out.dv += w * g.dv;
    out.loglik += w * g.value;
  }
  return out;
}

bool clip_gradient(Eigen::Ref<Vector> g, double threshold) {
  if (!(threshold > 0.0)) throw InvalidArgument("clip threshold must be positive");
  const double norm = g.norm();
  if (norm <= threshold) return false;
  g *= threshold / norm;
  return true;
}

bool clip_gradient(Matrix& g, double threshold) {
  Eigen::Map<Vector> flat(g.data(), g.size());
  return clip_gradient(flat, threshold);
}

HfLoglik hf_loglik(const Matrix& y_model, const Matrix& y_obs, double tau) {
  if (y_model.rows() != y_obs.rows() || y_model.cols() != y_obs.cols()) {
    throw ShapeMismatch("model output and observations differ in shape");
  }
  check_tau(tau);
  const Matrix r = y_model - y_obs;
  HfLoglik out;
  out.value = 0.5 * static_cast<double>(r.size()) * (std::log(tau) - 2.0 * kHalfLog2Pi) -
              0.5 * tau * r.squaredNorm();
  out.grad = -tau * r;
  return out;
}

}  // namespace bmfia
