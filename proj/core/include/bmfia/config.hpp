#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmfia/conditional.hpp"
#include "bmfia/mf_likelihood.hpp"
#include "bmfia/nn/network.hpp"
#include "bmfia/svi.hpp"

namespace bmfia {

struct MeshFieldConfig {
  std::array<int, 2> field_mesh{32, 32};
  double prior_mean = 1.0;
  double eps_reg = 1e-6;
  bool periodic = false;
  /// Gamma(a0, b0) hyper-prior on the prior precision delta.
  double delta_a0 = 1e-9;
  double delta_b0 = 1e-9;
  /// Ground-truth precision.
  double delta_gt = 6e-4;
};

struct DarcyConfig {
  std::array<int, 2> lf_mesh{32, 32};
  std::array<int, 2> hf_mesh{64, 64};
  std::string lf_bc = "lf_moderate";
  std::string hf_bc = "hf_quadratic";
};

struct ObservationConfig {
  int rows = 50;
  int cols = 50;
  /// Zero or negative means noise-free.
  double snr = 50.0;
};

struct ConditionalConfig {
  int n_train = 100;
  double delta_lo = 1e-3;
  double delta_hi = 1e-2;
  std::array<int, 3> channels{16, 32, 64};
  int bottleneck = 200;
  double dropout = 0.3;
  double nugget = 1e-5;
  std::string pooling = "max";
  int epochs = 4000;
  int batch_size = 128;
  std::string optimizer = "sgd";
  double learning_rate = 1e-3;
  int refine_epochs = 4000;
  int refine_samples = 10;
  /// Extra held-out pairs for the calibration report. Their HF solves run on
  /// a separate diagnostic solver and are not part of the training budget.
  int n_holdout = 20;
};

struct LikelihoodConfig {
  double tau_a0 = 1e-9;
  double tau_b0 = 1e-9;
  double clip_threshold = 1e3;
  int vbem_steps = 50;
  int n_tau = 10;
  double vbem_learning_rate = 1e-2;
};

struct SviSection {
  int batch_size = 6;
  long max_calls = 4000;
  int iterations = -1;
  int bandwidth = 10;
  std::string optimizer = "sgd";
  double learning_rate = 1e-3;
  double lr_decay_steps = 0.0;
  double init_std = 0.1;
  std::vector<int> refine_at{100, 300};
};

struct ReportConfig {
  int mc_samples = 10000;
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  int workers = 1;
  MeshFieldConfig mesh_field;
  DarcyConfig darcy;
  ObservationConfig observations;
  ConditionalConfig conditional;
  LikelihoodConfig likelihood;
  SviSection svi;
  ReportConfig report;

  static RunConfig paper();
  static RunConfig desk();
  static RunConfig preset_by_name(const std::string& name);

  /// Cross-section consistency; throws ConfigError.
  void validate() const;

  nlohmann::json to_json() const;
  /// Overlay `j` onto `base`; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);

  /// FNV-1a hash of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;

  nn::Architecture architecture() const;
  TrainConfig train_config() const;
  SviConfig svi_config(std::uint64_t seed) const;
  VbemConfig vbem_config() const;
};

/// Independent random streams derived from the master seed.
enum class SeedStream : std::uint64_t {
  truth = 1,
  noise = 2,
  training_inputs = 3,
  network_init = 4,
  training = 5,
  svi = 6,
  vbem = 7,
  refine = 8,
  report = 9,
  holdout = 10,
};
std::uint64_t stream_seed(std::uint64_t master, SeedStream stream);
std::string stream_name(SeedStream stream);

}  // namespace bmfia
