#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace bmfia {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

/// n x 2 velocity matrix, one row per observation coordinate (u1, u2).
using VelocityMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Fill a vector with independent standard normal draws.
inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = dist(rng);
  return z;
}

/// Derive an independent stream seed from a base seed and a stream index
/// (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace bmfia
