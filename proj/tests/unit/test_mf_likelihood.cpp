#include <cmath>
#include <numeric>

#include "bmfia/mf_likelihood.hpp"
#include "doctest.h"

using namespace bmfia;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * standard_normal(1, rng)[0];
  return m;
}

Matrix positive_matrix(int r, int c, Rng& rng) {
  return random_matrix(r, c, rng).array().square() + 0.1;
}

}  // namespace

TEST_CASE("scalar closed form") {
  Matrix z = Matrix::Zero(1, 1);
  Matrix one = Matrix::Ones(1, 1);
  CHECK(mf_loglik(z, one, z, 1.0) == doctest::Approx(-0.5 * std::log(4.0 * M_PI)).epsilon(1e-14));
  CHECK(mf_loglik(z, one, z, 1.0) == doctest::Approx(-1.265512).epsilon(1e-6));
  CHECK_THROWS_AS(mf_loglik(z, one, z, 0.0), InvalidArgument);
  CHECK_THROWS_AS(mf_loglik(z, one, z, -2.0), InvalidArgument);
}

TEST_CASE("zero conditional variance reduces to the plain gaussian") {
  Rng rng(1);
  Matrix m = random_matrix(30, 2, rng), y = random_matrix(30, 2, rng);
  const double tau = 3.7;
  auto hf = hf_loglik(m, y, tau);
  double mf = mf_loglik(m, Matrix::Zero(30, 2), y, tau);
  CHECK(std::abs(mf - hf.value) <= 1e-12 * std::abs(hf.value));
  auto g = mf_loglik_grads(m, Matrix::Zero(30, 2), y, tau);
  CHECK((g.dm - hf.grad).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("additivity and permutation invariance") {
  Rng rng(2);
  Matrix m = random_matrix(20, 2, rng), y = random_matrix(20, 2, rng);
  Matrix v = positive_matrix(20, 2, rng);
  const double tau = 0.8;
  double whole = mf_loglik(m, v, y, tau);
  double parts = mf_loglik(m.topRows(7), v.topRows(7), y.topRows(7), tau) +
                 mf_loglik(m.bottomRows(13), v.bottomRows(13), y.bottomRows(13), tau);
  CHECK(std::abs(whole - parts) <= 1e-12 * std::abs(whole));

  Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 20, rng);
  Matrix mp = perm * m, vp = perm * v, yp = perm * y;
  CHECK(std::abs(mf_loglik(mp, vp, yp, tau) - whole) <= 1e-12 * std::abs(whole));
}

TEST_CASE("analytic partials match central differences") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix m = random_matrix(6, 2, rng), y = random_matrix(6, 2, rng);
    Matrix v = positive_matrix(6, 2, rng);
    const double tau = 0.5 + std::abs(standard_normal(1, rng)[0]);
    auto g = mf_loglik_grads(m, v, y, tau);
    CHECK(g.value == doctest::Approx(mf_loglik(m, v, y, tau)).epsilon(1e-14));
    const double h = 1e-6;
    // Each entry only enters its own term, so scalar partials avoid
    // cancellation in the full sum.
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 2; ++j) {
        auto term = [&](double mm, double vv) {
          Matrix a = Matrix::Constant(1, 1, mm), b = Matrix::Constant(1, 1, vv);
          return mf_loglik(a, b, y.block(i, j, 1, 1), tau);
        };
        double fdm = (term(m(i, j) + h, v(i, j)) - term(m(i, j) - h, v(i, j))) / (2 * h);
        double fdv = (term(m(i, j), v(i, j) + h) - term(m(i, j), v(i, j) - h)) / (2 * h);
        CHECK(std::abs(fdm - g.dm(i, j)) <= 1e-7 * std::max(1.0, std::abs(g.dm(i, j))));
        CHECK(std::abs(fdv - g.dv(i, j)) <= 1e-7 * std::max(1.0, std::abs(g.dv(i, j))));
      }
    double fdt = (mf_loglik(m, v, y, tau + h) - mf_loglik(m, v, y, tau - h)) / (2 * h);
    CHECK(std::abs(fdt - g.dtau) <= 1e-7 * std::max(1.0, std::abs(g.dtau)));
  }
}

TEST_CASE("gradient signs at the data") {
  Rng rng(4);
  Matrix y = random_matrix(5, 2, rng);
  Matrix v = positive_matrix(5, 2, rng);
  const double tau = 2.0;
  auto g = mf_loglik_grads(y, v, y, tau);
  CHECK(g.dm.cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) CHECK(g.dv(i, j) == doctest::Approx(-0.5 / (1.0 / tau + v(i, j))));
}

TEST_CASE("marginalization matches monte carlo integration") {
  Rng rng(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double m = n01(rng), v = 0.2 + std::abs(n01(rng)), y = n01(rng);
    const double tau = 0.5 + std::abs(n01(rng));
    const int samples = 200000;
    double sum = 0.0, sq = 0.0;
    for (int s = 0; s < samples; ++s) {
      const double yhf = m + std::sqrt(v) * n01(rng);
      const double d = y - yhf;
      const double p = std::sqrt(tau / (2 * M_PI)) * std::exp(-0.5 * tau * d * d);
      sum += p;
      sq += p * p;
    }
    const double mean = sum / samples;
    const double se = std::sqrt((sq / samples - mean * mean) / samples);
    const double exact = std::exp(mf_loglik(Matrix::Constant(1, 1, m), Matrix::Constant(1, 1, v),
                                            Matrix::Constant(1, 1, y), tau));
    CHECK(std::abs(mean - exact) <= 3.0 * se);
  }
}

TEST_CASE("tau VB-EM recovers the conjugate gamma mean") {
  Rng rng(6);
  Matrix m = random_matrix(50, 2, rng);
  Matrix y = m + random_matrix(50, 2, rng, 0.3);
  const double a0 = 1e-9, b0 = 1e-9;
  const double shape = a0 + 50.0;
  const double rate = b0 + 0.5 * (m - y).squaredNorm();
  const double exact = shape / rate;

  VbemConfig cfg;
  cfg.steps = 3000;
  cfg.n_tau = 10;
  auto phi0 = tau_init_from_residual(m - y);
  phi0.mu_tau -= 1.0;
  auto res = vbem_tau(m, Matrix::Zero(50, 2), y, a0, b0, phi0, cfg, 11);
  MESSAGE("VB mean " << res.phi.mean() << " vs Gamma mean " << exact);
  CHECK(std::abs(res.phi.mean() - exact) <= 0.05 * exact);
  REQUIRE(res.tau_samples.size() == 10);
  REQUIRE(res.elbo_trace.size() == 3000);

  // Smoothed trace (window 20) over the final half: no drop beyond the
  // Monte Carlo scatter of a window mean.
  const auto& t = res.elbo_trace;
  const int w = 20;
  std::vector<double> smooth;
  for (std::size_t i = w - 1; i < t.size(); ++i)
    smooth.push_back(std::accumulate(t.begin() + static_cast<long>(i) - (w - 1),
                                     t.begin() + static_cast<long>(i) + 1, 0.0) / w);
  double var = 0.0;
  const std::size_t half = t.size() / 2;
  double tail_mean = std::accumulate(t.begin() + static_cast<long>(half), t.end(), 0.0) /
                     static_cast<double>(t.size() - half);
  for (std::size_t i = half; i < t.size(); ++i) var += (t[i] - tail_mean) * (t[i] - tail_mean);
  var /= static_cast<double>(t.size() - half - 1);
  const double tol = 3.0 * std::sqrt(var / w);
  double running_max = -1e300;
  double worst = 0.0;
  for (std::size_t i = half; i < smooth.size(); ++i) {
    running_max = std::max(running_max, smooth[i]);
    worst = std::max(worst, running_max - smooth[i]);
  }
  CHECK(worst <= 2.0 * tol);
  CHECK(smooth.back() > smooth.front());
}

TEST_CASE("zero steps with a degenerate q returns the start value") {
  Matrix m = Matrix::Zero(3, 2), y = Matrix::Ones(3, 2);
  TauVariational phi0;
  phi0.mu_tau = 0.7;
  phi0.log_sigma_tau = std::log(1e-6);
  VbemConfig cfg;
  cfg.steps = 0;
  cfg.n_tau = 5;
  auto res = vbem_tau(m, Matrix::Zero(3, 2), y, 1.0, 1.0, phi0, cfg, 1);
  for (double t : res.tau_samples) CHECK(t == doctest::Approx(std::exp(0.7)).epsilon(1e-5));
  CHECK(res.elbo_trace.empty());
}

TEST_CASE("vbem reports divergence") {
  Matrix m = Matrix::Zero(2, 2), y = Matrix::Ones(2, 2);
  TauVariational phi0;
  phi0.mu_tau = 800.0;
  VbemConfig cfg;
  cfg.steps = 3;
  CHECK_THROWS_AS(vbem_tau(m, Matrix::Zero(2, 2), y, 1.0, 1.0, phi0, cfg, 1), TauDivergence);
}

TEST_CASE("marginalized gradients") {
  Rng rng(7);
  Matrix m = random_matrix(4, 2, rng), y = random_matrix(4, 2, rng);
  Matrix v = positive_matrix(4, 2, rng);
  auto one = marginalized_grads(m, v, y, {1.3});
  auto direct = mf_loglik_grads(m, v, y, 1.3);
  CHECK(one.dm == direct.dm);
  CHECK(one.dv == direct.dv);
  CHECK(one.loglik == direct.value);
  auto two = marginalized_grads(m, v, y, {1.3, 1.3});
  CHECK((two.dm - one.dm).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(marginalized_grads(m, v, y, {}), InvalidArgument);
}

TEST_CASE("averaging over q(tau) matches quadrature") {
  const double mu = 0.3, sigma = 0.6;
  const double m = 0.4, v = 0.5, y = -0.2;
  auto dm_at = [&](double tau) { return -(m - y) / (1.0 / tau + v); };
  // Trapezoid over the standard normal variable.
  double quad = 0.0;
  const int n = 20001;
  const double lo = -10.0, hi = 10.0, h = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) {
    double r = lo + i * h;
    double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    quad += w * h * std::exp(-0.5 * r * r) / std::sqrt(2 * M_PI) * dm_at(std::exp(mu + sigma * r));
  }
  Rng rng(8);
  std::vector<double> taus(10000);
  double sq = 0.0, sum = 0.0;
  for (auto& t : taus) {
    t = std::exp(mu + sigma * standard_normal(1, rng)[0]);
    sum += dm_at(t);
    sq += dm_at(t) * dm_at(t);
  }
  const double mean = sum / 1e4;
  const double se = std::sqrt((sq / 1e4 - mean * mean) / 1e4);
  auto g = marginalized_grads(Matrix::Constant(1, 1, m), Matrix::Constant(1, 1, v),
                              Matrix::Constant(1, 1, y), taus);
  CHECK(g.dm(0, 0) == doctest::Approx(mean).epsilon(1e-12));
  CHECK(std::abs(g.dm(0, 0) - quad) <= 3.0 * se);
}

TEST_CASE("global norm clipping") {
  Rng rng(9);
  const double thr = 2.0;
  Matrix g = random_matrix(5, 3, rng);
  g *= 0.5 * thr / g.norm();
  Matrix before = g;
  CHECK_FALSE(clip_gradient(g, thr));
  CHECK(g == before);

  g *= 4.0;
  Matrix unclipped = g;
  CHECK(clip_gradient(g, thr));
  CHECK(g.norm() == doctest::Approx(thr).epsilon(1e-14));
  double cosine = (g.array() * unclipped.array()).sum() / (g.norm() * unclipped.norm());
  CHECK(std::abs(cosine - 1.0) <= 1e-12);

  Matrix again = g;
  clip_gradient(again, thr);
  CHECK((again - g).norm() <= 1e-15);
  CHECK_THROWS_AS(clip_gradient(g, 0.0), InvalidArgument);
}

TEST_CASE("plain gaussian likelihood") {
  Rng rng(10);
  Matrix y = random_matrix(8, 2, rng);
  const double tau = 4.0;
  auto at_mode = hf_loglik(y, y, tau);
  CHECK(at_mode.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(at_mode.value == doctest::Approx(8.0 * (std::log(tau) - std::log(2 * M_PI))));

  Matrix m = random_matrix(8, 2, rng);
  auto g = hf_loglik(m, y, tau);
  const double h = 1e-6;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2; ++j) {
      Matrix a = m.block(i, j, 1, 1), b = y.block(i, j, 1, 1);
      Matrix ap = a, am = a;
      ap(0, 0) += h;
      am(0, 0) -= h;
      double fd = (hf_loglik(ap, b, tau).value - hf_loglik(am, b, tau).value) / (2 * h);
      CHECK(std::abs(fd - g.grad(i, j)) <= 1e-8 * std::max(1.0, std::abs(g.grad(i, j))));
    }
}
