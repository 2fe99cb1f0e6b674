#pragma once

#include <cstdint>
#include <limits>

#include "bmfia/markov_prior.hpp"
#include "bmfia/mesh.hpp"
#include "bmfia/types.hpp"

namespace bmfia {

/// Sentinel for noise-free observations.
inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

struct ObservationSet {
  VelocityMatrix y_obs;
  double sigma2 = 0.0;
  double snr = kInfiniteSnr;
  std::uint64_t seed = 0;
  int rows = 0;
  int cols = 0;
};

/// One sample of the Markov prior at precision `delta_gt`.
Vector make_ground_truth(const MarkovPrior& prior, double delta_gt, std::uint64_t seed);

/// Noise variance giving the requested signal-to-noise ratio:
/// sigma2 = sum_i ||row_i||^2 / (2 n) / snr.
double noise_variance_for_snr(const VelocityMatrix& y_gt, double snr);

/// Corrupt `y_gt` with i.i.d. Gaussian noise at the requested SNR.
/// Throws DegenerateSignal if `y_gt` is identically zero and snr is finite.
ObservationSet gen_observations(const VelocityMatrix& y_gt, double snr, std::uint64_t seed,
                                int rows, int cols);

}  // namespace bmfia
