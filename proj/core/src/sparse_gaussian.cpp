#include "bmfia/sparse_gaussian.hpp"

#include <cmath>
#include <numbers>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"

namespace bmfia {

SparseGaussian::SparseGaussian(Vector mu, int bandwidth, double init_std)
    : mu_(std::move(mu)), w_(bandwidth) {
  if (bandwidth < 0) throw InvalidArgument("bandwidth must be non-negative");
  if (!(init_std > 0.0)) throw InvalidArgument("initial standard deviation must be positive");
  raw_ = Matrix::Zero(mu_.size(), w_ + 1);
  raw_.col(0).setConstant(std::log(init_std));
}

Vector SparseGaussian::apply_factor(const Vector& r) const {
  if (r.size() != mu_.size()) throw ShapeMismatch("factor input has the wrong dimension");
  const int n = dim();
  Vector out(n);
  for (int i = 0; i < n; ++i) {
    double s = std::exp(raw_(i, 0)) * r[i];
    const int kmax = std::min(w_, i);
    for (int k = 1; k <= kmax; ++k) s += raw_(i, k) * r[i - k];
    out[i] = s;
  }
  return out;
}

SparseGaussian::Draws SparseGaussian::sample(int n_samples, Rng& rng) const {
  if (n_samples < 1) throw InvalidArgument("sample count must be at least 1");
  Draws d;
  d.xs.reserve(static_cast<std::size_t>(n_samples));
  d.rs.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    d.rs.push_back(standard_normal(mu_.size(), rng));
    d.xs.push_back(mu_ + apply_factor(d.rs.back()));
  }
  return d;
}

SparseGaussian::Draws SparseGaussian::sample(int n_samples, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(n_samples, rng);
}

double SparseGaussian::entropy() const {
  return 0.5 * dim() * std::log(2.0 * std::numbers::pi * std::numbers::e) + raw_.col(0).sum();
}

std::size_t SparseGaussian::param_count() const {
  return static_cast<std::size_t>(mu_.size() + raw_.size());
}

std::vector<double> SparseGaussian::flat() const {
  std::vector<double> phi(param_count());
  std::copy(mu_.data(), mu_.data() + mu_.size(), phi.begin());
  std::copy(raw_.data(), raw_.data() + raw_.size(), phi.begin() + mu_.size());
  return phi;
}

void SparseGaussian::set_flat(const std::vector<double>& phi) {
  if (phi.size() != param_count()) throw ShapeMismatch("variational parameter count mismatch");
  std::copy(phi.begin(), phi.begin() + mu_.size(), mu_.data());
  std::copy(phi.begin() + mu_.size(), phi.end(), raw_.data());
  enforce_band();
}

void SparseGaussian::enforce_band() {
  for (int i = 0; i < std::min(dim(), w_); ++i) {
    for (int k = i + 1; k <= w_; ++k) raw_(i, k) = 0.0;
  }
}

std::vector<double> SparseGaussian::elbo_grad(const std::vector<Vector>& rs,
                                              const std::vector<Vector>& grads) const {
  if (rs.size() != grads.size() || rs.empty()) {
    throw ShapeMismatch("noise draws and gradients are misaligned");
  }
  const int n = dim();
  const double inv = 1.0 / static_cast<double>(rs.size());
  Vector gmu = Vector::Zero(n);
  Matrix gband = Matrix::Zero(n, w_ + 1);
  for (std::size_t s = 0; s < rs.size(); ++s) {
    const Vector& r = rs[s];
    const Vector& g = grads[s];
    if (r.size() != n || g.size() != n) throw ShapeMismatch("sample dimension mismatch");
    gmu += g;
    for (int i = 0; i < n; ++i) {
      const int kmax = std::min(w_, i);
      for (int k = 0; k <= kmax; ++k) gband(i, k) += g[i] * r[i - k];
    }
  }
  gmu *= inv;
  gband *= inv;
  for (int i = 0; i < n; ++i) gband(i, 0) = gband(i, 0) * std::exp(raw_(i, 0)) + 1.0;

  std::vector<double> out(param_count());
  std::copy(gmu.data(), gmu.data() + n, out.begin());
  std::copy(gband.data(), gband.data() + gband.size(), out.begin() + n);
  return out;
}

Matrix SparseGaussian::dense_factor() const {
  const int n = dim();
  Matrix l = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    l(i, i) = std::exp(raw_(i, 0));
    for (int k = 1; k <= std::min(w_, i); ++k) l(i, i - k) = raw_(i, k);
  }
  return l;
}

Matrix SparseGaussian::dense_covariance() const {
  const Matrix l = dense_factor();
  return l * l.transpose();
}

Vector SparseGaussian::marginal_std() const {
  const int n = dim();
  Vector s(n);
  for (int i = 0; i < n; ++i) {
    double v = std::exp(2.0 * raw_(i, 0));
    for (int k = 1; k <= std::min(w_, i); ++k) v += raw_(i, k) * raw_(i, k);
    s[i] = std::sqrt(v);
  }
  return s;
}

void SparseGaussian::save(const std::filesystem::path& path) const {
  nlohmann::json header{{"format", "bmfia-sparse-gaussian"},
                        {"format_version", 1},
                        {"dim", dim()},
                        {"bandwidth", w_},
                        {"layout", "mu then band rows (log-diagonal first)"}};
  io::write_container(path, header, flat());
}

SparseGaussian SparseGaussian::load(const std::filesystem::path& path) {
  const auto c = io::read_container(path);
  if (c.header.value("format", std::string()) != "bmfia-sparse-gaussian") {
    throw MissingArtifact("'" + path.string() + "' is not a variational checkpoint");
  }
  const int n = c.header.at("dim").get<int>();
  const int w = c.header.at("bandwidth").get<int>();
  SparseGaussian q(Vector::Zero(n), w);
  q.set_flat(c.blob);
  return q;
}

double gaussian_kl(const Vector& m0, const Matrix& s0, const Vector& m1, const Matrix& s1) {
  const Eigen::Index n = m0.size();
  Eigen::LLT<Eigen::MatrixXd> l1(s1);
  Eigen::LLT<Eigen::MatrixXd> l0(s0);
  if (l1.info() != Eigen::Success || l0.info() != Eigen::Success) {
    throw FactorizationError("KL needs positive definite covariances");
  }
  const Eigen::MatrixXd s1inv_s0 = l1.solve(Eigen::MatrixXd(s0));
  const Eigen::VectorXd d = m1 - m0;
  const double quad = d.dot(l1.solve(d));
  const double logdet1 = 2.0 * Eigen::MatrixXd(l1.matrixL()).diagonal().array().log().sum();
  const double logdet0 = 2.0 * Eigen::MatrixXd(l0.matrixL()).diagonal().array().log().sum();
  return 0.5 * (s1inv_s0.trace() + quad - static_cast<double>(n) + logdet1 - logdet0);
}

}  // namespace bmfia
