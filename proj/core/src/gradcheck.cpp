#include "bmfia/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "bmfia/conditional.hpp"
#include "bmfia/darcy.hpp"
#include "bmfia/markov_prior.hpp"
#include "bmfia/mf_likelihood.hpp"
#include "bmfia/pipeline.hpp"
#include "bmfia/sparse_gaussian.hpp"

namespace bmfia {

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

void GradcheckReport::print(std::ostream& os) const {
  char line[256];
  std::snprintf(line, sizeof(line), "%-34s %12s %10s  %s\n", "audit", "rel_error", "tol", "result");
  os << line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof(line), "%-34s %12.3e %10.1e  %s%s%s\n", e.name.c_str(), e.rel_error, e.tolerance,
                  e.passed ? "PASS" : "FAIL", e.note.empty() ? "" : "  ", e.note.c_str());
    os << line;
  }
}

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-10}); }

/// Worst relative error of directional derivatives d^T g against central
/// differences of f along `dirs` random directions.
double directional_check(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& g,
                         int dirs, double h, Rng& rng) {
  double worst = 0.0;
  for (int k = 0; k < dirs; ++k) {
    Vector d = standard_normal(x.size(), rng);
    d /= d.norm();
    const double fd = (f(x + h * d) - f(x - h * d)) / (2.0 * h);
    worst = std::max(worst, rel(g.dot(d), fd));
  }
  return worst;
}

/// ||g - g_fd|| / ||g_fd|| with a full coordinate-wise central difference.
double coordinate_check(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& g,
                        double h) {
  Vector fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x;
    Vector xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return (g - fd).norm() / std::max(fd.norm(), 1e-12);
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }
Matrix unflat(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed) {
  GradcheckReport rep;
  Rng rng(seed);
  auto add = [&](std::string name, double err, double tol, std::string note = {}) {
    rep.entries.push_back({std::move(name), err, tol, err <= tol, std::move(note)});
  };

  const Mesh field_mesh(8, 8);
  const ObservationGrid grid(8, 8);
  const MarkovPrior prior(field_mesh, 1.0, 1e-9, 1e-9, 0.05);
  Rng prior_rng(derive_seed(seed, 1));
  const Vector x0 = prior.sample(2.0, prior_rng, 1).front();

  // Darcy adjoint, same mesh and a finer solver mesh over the field mesh.
  for (int fine : {0, 1}) {
    const DarcySolver solver(Mesh(8 << fine, 8 << fine), PressureBC(fine ? BcKind::hf_quadratic : BcKind::lf_moderate),
                             grid, field_mesh);
    const VelocityMatrix w = VelocityMatrix::Random(grid.size(), 2);
    const auto sol = solver.solve(x0);
    const Vector g = solver.adjoint(sol, w);
    auto f = [&](const Vector& x) { return (solver.solve(x).y.array() * w.array()).sum(); };
    add(fine ? "darcy_adjoint (16x16 over 8x8)" : "darcy_adjoint (8x8)", directional_check(f, x0, g, 6, 1e-5, rng), 1e-6);
  }

  // Interpolation adjoint: <S x, v> = <x, S^T v>.
  {
    const FieldInterpolator s(field_mesh, grid);
    const Vector v = standard_normal(grid.size(), rng);
    add("interpolation_adjoint", rel(s.apply(x0).dot(v), x0.dot(s.adjoint(v))), 1e-12);
  }

  // Prior EM term with a frozen E-step.
  {
    const auto e = prior.delta_posterior(x0);
    const Vector g = prior.log_prior_frozen(x0, e).grad;
    auto f = [&](const Vector& x) { return prior.log_prior_frozen(x, e).value; };
    add("prior_em_gradient", directional_check(f, x0, g, 6, 1e-5, rng), 1e-7);
  }

  // MF likelihood partials.
  {
    const Matrix m = Matrix::Random(30, 2);
    const Matrix v = Matrix::Random(30, 2).array().abs() + 0.1;
    const Matrix y = Matrix::Random(30, 2);
    const double tau = 2.5;
    const auto g = mf_loglik_grads(m, v, y, tau);
    const double h = 1e-6;
    // Entrywise partials; the likelihood is a sum of independent entries.
    auto entry = [&](Eigen::Index i, double mi, double vi) {
      return mf_loglik(Matrix::Constant(1, 1, mi), Matrix::Constant(1, 1, vi), Matrix::Constant(1, 1, y.data()[i]),
                       tau);
    };
    double em = 0.0;
    double ev = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double mi = m.data()[i];
      const double vi = v.data()[i];
      em = std::max(em, rel(g.dm.data()[i], (entry(i, mi + h, vi) - entry(i, mi - h, vi)) / (2.0 * h)));
      ev = std::max(ev, rel(g.dv.data()[i], (entry(i, mi, vi + h) - entry(i, mi, vi - h)) / (2.0 * h)));
    }
    const double fd_tau = (mf_loglik(m, v, y, tau + h) - mf_loglik(m, v, y, tau - h)) / (2.0 * h);
    add("mf_loglik dM", em, 1e-7);
    add("mf_loglik dV", ev, 1e-7);
    add("mf_loglik dtau", rel(g.dtau, fd_tau), 1e-7);
  }

  // Conditional input gradient with a downsized network in inference mode.
  nn::Architecture arch;
  arch.rows = grid.rows();
  arch.cols = grid.cols();
  arch.channels = {3, 4, 4};
  arch.bottleneck = 8;
  ConditionalModel model(arch, derive_seed(seed, 2));
  const DarcySolver lf(field_mesh, PressureBC(BcKind::lf_moderate), grid);
  {
    const Matrix z = lf_features(lf, x0);
    const Matrix a = Matrix::Random(z.rows(), 2);
    const Matrix b = Matrix::Random(z.rows(), 2);
    const Matrix dz = model.input_gradient(z, a, b);
    auto f = [&](const Vector& zz) {
      const auto p = model.predict(unflat(zz, z.rows(), 3));
      return (p.mean.array() * a.array()).sum() + (p.variance.array() * b.array()).sum();
    };
    add("conditional_input_gradient", directional_check(f, flat(z), flat(dz), 6, 1e-5, rng), 1e-5);
    const Matrix zero = Matrix::Zero(z.rows(), 2);
    add("conditional zero seed", model.input_gradient(z, zero, zero).cwiseAbs().maxCoeff(), 0.0);
  }

  // Entropy and pathwise ELBO gradient of the banded family.
  {
    SparseGaussian q(standard_normal(12, rng), 3);
    q.band() = Matrix::Random(12, 4) * 0.3;
    q.enforce_band();
    const auto phi = q.flat();
    const Vector phi_v = Eigen::Map<const Vector>(phi.data(), static_cast<Eigen::Index>(phi.size()));
    Vector gh = Vector::Zero(phi_v.size());
    for (int i = 0; i < 12; ++i) gh[12 + i * 4] = 1.0;
    auto fh = [&](const Vector& p) {
      SparseGaussian t = q;
      t.set_flat(std::vector<double>(p.data(), p.data() + p.size()));
      return t.entropy();
    };
    // H is linear in the parameters, so a large step is exact up to rounding.
    add("entropy_gradient", coordinate_check(fh, phi_v, gh, 1e-2), 1e-9);

    const Matrix a = Matrix::Random(12, 12);
    const Matrix prec = a * a.transpose() + Matrix::Identity(12, 12);
    const Vector m = standard_normal(12, rng);
    const auto draws = q.sample(3, rng);
    std::vector<Vector> grads;
    for (const auto& x : draws.xs) grads.push_back(-prec * (x - m));
    const auto g = q.elbo_grad(draws.rs, grads);
    auto fe = [&](const Vector& p) {
      SparseGaussian t = q;
      t.set_flat(std::vector<double>(p.data(), p.data() + p.size()));
      double s = 0.0;
      for (const auto& r : draws.rs) {
        const Vector d = t.mu() + t.apply_factor(r) - m;
        s += -0.5 * d.dot(prec * d);
      }
      return s / static_cast<double>(draws.rs.size()) + t.entropy();
    };
    // Out-of-band slots are structurally zero; set_flat keeps them at zero so
    // their FD entries vanish like the analytic ones.
    const Vector gv = Eigen::Map<const Vector>(g.data(), static_cast<Eigen::Index>(g.size()));
    const double worst = coordinate_check(fe, phi_v, gv, 1e-5);
    add("elbo_pathwise_gradient", worst, 1e-7);
  }

  // Full chain x -> (LF solve, interpolation) -> conditional -> L_MF with
  // frozen tau samples. Compared before clipping.
  {
    const Matrix y = lf.solve(x0).y + 0.05 * Matrix::Random(grid.size(), 2);
    const std::vector<double> taus{5.0, 12.0, 30.0};
    auto f = [&](const Vector& x) {
      const auto p = model.predict(lf_features(lf, x));
      return marginalized_grads(p.mean, p.variance, y, taus).loglik;
    };
    DarcySolution sol;
    const auto ev = model.evaluate(lf_features(lf, x0, &sol));
    const auto mg = marginalized_grads(ev.prediction.mean, ev.prediction.variance, y, taus);
    Matrix dz = model.input_gradient(ev, mg.dm, mg.dv);
    const double norm = dz.norm();
    const VelocityMatrix dy = dz.leftCols(2);
    const Vector g = lf.adjoint(sol, dy) + lf.observation_interpolator().adjoint(dz.col(2));
    const bool would_clip = norm > 1e3;
    add("full_chain grad_x L_MF", directional_check(f, x0, g, 6, 1e-5, rng), 1e-4,
        would_clip ? "clipping active; compared pre-clip" : "");
  }

  // Reference chain through the plain Gaussian likelihood.
  {
    const DarcySolver hf(Mesh(16, 16), PressureBC(BcKind::hf_quadratic), grid, field_mesh);
    const Matrix y = hf.solve(x0).y + 0.05 * Matrix::Random(grid.size(), 2);
    const double tau = 20.0;
    const Vector x1 = x0 + 0.1 * standard_normal(x0.size(), rng);
    const auto sol = hf.solve(x1);
    const auto hl = hf_loglik(sol.y, y, tau);
    const Vector g = hf.adjoint(sol, VelocityMatrix(hl.grad));
    auto f = [&](const Vector& x) { return hf_loglik(hf.solve(x).y, y, tau).value; };
    add("hf_loglik chain", directional_check(f, x1, g, 6, 1e-5, rng), 1e-6);
  }
  return rep;
}

}  // namespace bmfia
