#include "bmfia/observations.hpp"

#include <cmath>

#include "bmfia/error.hpp"

namespace bmfia {

Vector make_ground_truth(const MarkovPrior& prior, double delta_gt, std::uint64_t seed) {
  if (!(delta_gt > 0.0)) throw InvalidArgument("ground-truth precision must be positive");
  Rng rng(seed);
  return prior.sample(delta_gt, rng, 1).front();
}

double noise_variance_for_snr(const VelocityMatrix& y_gt, double snr) {
  if (!(snr > 0.0)) throw InvalidArgument("snr must be positive");
  if (!y_gt.allFinite()) throw InvalidArgument("ground-truth velocities contain non-finite entries");
  if (std::isinf(snr)) return 0.0;
  const double power = y_gt.squaredNorm() / static_cast<double>(y_gt.size());
  if (power == 0.0) throw DegenerateSignal("ground-truth signal is identically zero");
  return power / snr;
}

ObservationSet gen_observations(const VelocityMatrix& y_gt, double snr, std::uint64_t seed,
                                int rows, int cols) {
  if (static_cast<Eigen::Index>(rows) * cols != y_gt.rows()) {
    throw ShapeMismatch("observation grid shape does not match the velocity rows");
  }
  ObservationSet obs;
  obs.sigma2 = noise_variance_for_snr(y_gt, snr);
  obs.snr = snr;
  obs.seed = seed;
  obs.rows = rows;
  obs.cols = cols;
  obs.y_obs = y_gt;
  if (obs.sigma2 > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, std::sqrt(obs.sigma2));
    for (Eigen::Index i = 0; i < obs.y_obs.rows(); ++i) {
      for (int c = 0; c < 2; ++c) obs.y_obs(i, c) += noise(rng);
    }
  }
  return obs;
}

}  // namespace bmfia
