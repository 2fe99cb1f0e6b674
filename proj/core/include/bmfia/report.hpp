#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bmfia/mesh.hpp"
#include "bmfia/sparse_gaussian.hpp"

namespace bmfia {

/// Percentiles of k = exp(x~) along a straight line through the domain.
struct SliceTable {
  std::string name;
  std::vector<double> s;  // arc parameter in [0, 1]
  std::vector<double> c1;
  std::vector<double> c2;
  std::vector<double> p5;
  std::vector<double> p50;
  std::vector<double> p95;
  std::vector<double> truth;  // empty without a ground truth
};

struct PosteriorReport {
  int mc_samples = 0;
  Vector mean_x;     // variational mean of the log-permeability
  Vector mean_k;     // E[exp(x)] per node
  Vector two_std_k;  // 2 * std[exp(x)] per node
  std::vector<SliceTable> slices;
  /// Fraction of ground-truth slice values inside [p5, p95]; NaN without truth.
  double coverage = 0.0;

  void write(const std::filesystem::path& dir, const Mesh& field_mesh) const;
};

/// Monte-Carlo summary of q pushed through exp and interpolation. Slices run
/// along both diagonals, c1 = c2 and c1 = 1 - c2.
PosteriorReport make_report(const SparseGaussian& q, const Mesh& field_mesh, int mc_samples,
                            std::uint64_t seed, const Vector* x_truth = nullptr, int slice_points = 101);

/// Type-7 sample quantile of unsorted data (copied).
double quantile(std::vector<double> v, double p);

/// ||a - b|| / ||b||.
double relative_l2(const Vector& a, const Vector& b);

}  // namespace bmfia
