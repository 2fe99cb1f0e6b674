#include "bmfia/svi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"
#include "bmfia/worker_pool.hpp"

namespace bmfia {

int SviConfig::iteration_count() const {
  if (iterations > 0) return iterations;
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  return static_cast<int>(max_calls / batch_size);
}

BatchLogPosterior batch_from_pointwise(LogPosterior f, int workers) {
  return [f = std::move(f), workers](const std::vector<Vector>& xs, int) {
    BatchEvaluation out;
    out.values.resize(xs.size());
    out.grads.resize(xs.size());
    parallel_for(xs.size(), workers, [&](std::size_t i) {
      auto r = f(xs[i]);
      out.values[i] = r.value;
      out.grads[i] = std::move(r.grad);
    });
    return out;
  };
}

std::vector<double> SviTrace::elbo() const {
  std::vector<double> e;
  e.reserve(records.size());
  for (const auto& r : records) e.push_back(r.elbo);
  return e;
}

void SviTrace::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "iteration,elbo,mean_norm,logdiag_mean,E_delta,mu_tau,event\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << io::format_double(r.elbo) << ',' << io::format_double(r.mean_norm)
        << ',' << io::format_double(r.logdiag_mean) << ',' << io::format_double(r.e_delta) << ','
        << io::format_double(r.mu_tau) << ',' << r.event << '\n';
  }
}

void optimizer_step(SparseGaussian& q, StochasticOptimizer& opt, const std::vector<double>& grad) {
  auto phi = q.flat();
  opt.step(phi, grad, true);
  q.set_flat(phi);
}

SviResult run_inference(const BatchLogPosterior& logpost, SparseGaussian q0, const SviConfig& cfg,
                        const RefineHook& hook) {
  if (cfg.batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  SviResult res{std::move(q0), {}};
  SparseGaussian& q = res.q;
  const int iterations = cfg.iteration_count();
  StochasticOptimizer opt(cfg.optimizer);
  Rng rng(cfg.seed);

  for (int it = 0; it < iterations; ++it) {
    SviRecord rec;
    rec.iteration = it;
    if (hook && std::find(cfg.refine_at.begin(), cfg.refine_at.end(), it) != cfg.refine_at.end()) {
      rec.event = hook(it, q);
    }
    const auto draws = q.sample(cfg.batch_size, rng);
    BatchEvaluation ev;
    try {
      ev = logpost(draws.xs, it);
    } catch (...) {
      if (!cfg.checkpoint_path.empty()) q.save(cfg.checkpoint_path);
      throw;
    }
    if (ev.values.size() != draws.xs.size() || ev.grads.size() != draws.xs.size()) {
      throw ShapeMismatch("log-posterior returned a batch of the wrong size");
    }
    res.trace.model_calls += cfg.batch_size;

    double mean_value = 0.0;
    for (double v : ev.values) mean_value += v;
    mean_value /= static_cast<double>(ev.values.size());
    rec.elbo = mean_value + q.entropy();
    if (!std::isfinite(rec.elbo)) {
      if (!cfg.checkpoint_path.empty()) q.save(cfg.checkpoint_path);
      throw NumericalError("ELBO became non-finite at iteration " + std::to_string(it));
    }

    if (cfg.lr_decay_steps > 0.0) {
      opt.set_learning_rate(cfg.optimizer.learning_rate / (1.0 + it / cfg.lr_decay_steps));
    }
    optimizer_step(q, opt, q.elbo_grad(draws.rs, ev.grads));

    rec.mean_norm = q.mu().norm();
    rec.logdiag_mean = q.logdiag_mean();
    rec.e_delta = ev.e_delta;
    rec.mu_tau = ev.mu_tau;
    res.trace.records.push_back(std::move(rec));
  }
  return res;
}

std::vector<double> moving_average(const std::vector<double>& v, int window) {
  if (window < 1) throw InvalidArgument("window must be at least 1");
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= static_cast<std::size_t>(window)) sum -= v[i - static_cast<std::size_t>(window)];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

bool nondecreasing_within(const std::vector<double>& smoothed, std::size_t begin, double tol) {
  if (begin >= smoothed.size()) return true;
  double running = smoothed[begin];
  for (std::size_t i = begin + 1; i < smoothed.size(); ++i) {
    if (smoothed[i] < running - tol) return false;
    running = std::max(running, smoothed[i]);
  }
  return true;
}

double smoothed_drop_tolerance(const std::vector<double>& raw, std::size_t begin, int window) {
  if (window < 1) throw InvalidArgument("window must be at least 1");
  const std::size_t w = static_cast<std::size_t>(window);
  if (begin >= raw.size()) return 0.0;
  std::vector<double> blocks;
  for (std::size_t s = begin; s + w <= raw.size(); s += w) {
    double sum = 0.0;
    for (std::size_t i = s; i < s + w; ++i) sum += raw[i];
    blocks.push_back(sum / static_cast<double>(w));
  }
  if (blocks.size() < 3) return 0.0;
  // Spread of window means from successive differences: the median removes
  // a steady trend, the MAD ignores isolated jumps such as a refinement.
  std::vector<double> diffs;
  for (std::size_t k = 1; k < blocks.size(); ++k) diffs.push_back(blocks[k] - blocks[k - 1]);
  auto median = [](std::vector<double> v) {
    const auto mid = v.begin() + static_cast<long>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
  };
  const double centre = median(diffs);
  for (auto& d : diffs) d = std::abs(d - centre);
  const double sd = 1.4826 * median(diffs) / std::sqrt(2.0);
  // The check runs on overlapping windows, so count every smoothed point.
  const double n = std::max(2.0, static_cast<double>(raw.size() - begin));
  return 2.0 * std::sqrt(2.0 * std::log(n)) * sd;
}

}  // namespace bmfia
