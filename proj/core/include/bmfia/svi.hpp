#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bmfia/optimizer.hpp"
#include "bmfia/sparse_gaussian.hpp"

namespace bmfia {

/// Unnormalized log-posterior values and gradients for one batch of samples.
/// `e_delta` and `mu_tau` are optional diagnostics copied into the trace.
struct BatchEvaluation {
  std::vector<double> values;
  std::vector<Vector> grads;
  double e_delta = std::numeric_limits<double>::quiet_NaN();
  double mu_tau = std::numeric_limits<double>::quiet_NaN();
};

using BatchLogPosterior = std::function<BatchEvaluation(const std::vector<Vector>& xs, int iteration)>;

/// Per-sample form; value and gradient at one x.
struct LogPostValue {
  double value;
  Vector grad;
};
using LogPosterior = std::function<LogPostValue(const Vector& x)>;

/// Wrap a per-sample callback, evaluating each batch on `workers` threads.
BatchLogPosterior batch_from_pointwise(LogPosterior f, int workers = 1);

struct SviConfig {
  int batch_size = 6;
  long max_calls = 4000;
  /// Overrides max_calls / batch_size when positive.
  int iterations = -1;
  OptimizerConfig optimizer{OptimizerKind::sgd, 1e-3};
  /// lr_t = lr / (1 + t / lr_decay_steps) when lr_decay_steps > 0.
  double lr_decay_steps = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> refine_at{100, 300};
  /// Written if the callback throws. Empty disables the checkpoint.
  std::filesystem::path checkpoint_path;

  int iteration_count() const;
};

struct SviRecord {
  int iteration = 0;
  double elbo = 0.0;
  double mean_norm = 0.0;
  double logdiag_mean = 0.0;
  double e_delta = std::numeric_limits<double>::quiet_NaN();
  double mu_tau = std::numeric_limits<double>::quiet_NaN();
  std::string event;
};

struct SviTrace {
  std::vector<SviRecord> records;
  long model_calls = 0;

  std::vector<double> elbo() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Called before iteration `iteration` when it is listed in refine_at.
using RefineHook = std::function<std::string(int iteration, const SparseGaussian& q)>;

/// One ascent step on phi.
void optimizer_step(SparseGaussian& q, StochasticOptimizer& opt, const std::vector<double>& grad);

struct SviResult {
  SparseGaussian q;
  SviTrace trace;
};

SviResult run_inference(const BatchLogPosterior& logpost, SparseGaussian q0, const SviConfig& cfg,
                        const RefineHook& hook = {});

/// Trailing moving average; the first window-1 points average what is
/// available.
std::vector<double> moving_average(const std::vector<double>& v, int window);

/// Non-decreasing check for a noisy smoothed series over [begin, end): the
/// smoothed value may drop below its running maximum by at most `tol`.
bool nondecreasing_within(const std::vector<double>& smoothed, std::size_t begin, double tol);

/// Largest drop a flat noisy series would show after smoothing with `window`:
/// the expected range 2 sqrt(2 ln(n)) sd over the n smoothed points in
/// [begin, end), with sd a robust (median absolute deviation) estimate from
/// differences of successive non-overlapping window means of `raw`.
double smoothed_drop_tolerance(const std::vector<double>& raw, std::size_t begin, int window);

}  // namespace bmfia
