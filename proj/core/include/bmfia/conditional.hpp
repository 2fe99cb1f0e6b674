#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmfia/darcy.hpp"
#include "bmfia/markov_prior.hpp"
#include "bmfia/nn/network.hpp"
#include "bmfia/optimizer.hpp"
#include "bmfia/types.hpp"

namespace bmfia {

/// One training pair in pixel layout: row p = r * cols + j of `z` holds
/// (u1_LF, u2_LF, X) and the same row of `y` holds (u1_HF, u2_HF).
struct TrainingRecord {
  Matrix z;
  Matrix y;
};

/// Per-channel affine standardization (x - mean) / std.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  nlohmann::json to_json() const;
  static ChannelStats from_json(const nlohmann::json& j);
};

struct Standardization {
  static constexpr double kStdFloor = 1e-8;

  ChannelStats input;
  ChannelStats output;

  static Standardization compute(const std::vector<TrainingRecord>& records);

  Matrix standardize_input(const Matrix& z) const;
  Matrix destandardize_input(const Matrix& z) const;
  Matrix standardize_output(const Matrix& y) const;
  Matrix destandardize_output(const Matrix& y) const;

  nlohmann::json to_json() const;
  static Standardization from_json(const nlohmann::json& j);
};

struct TrainingSet {
  int rows = 0;
  int cols = 0;
  std::vector<TrainingRecord> records;
  Standardization stats;

  std::size_t size() const { return records.size(); }
  void recompute_stats() { stats = Standardization::compute(records); }
  /// Throws ShapeMismatch if any record disagrees with (rows, cols).
  void validate() const;

  /// Directory layout: manifest.json plus sample_<i>.csv files.
  void save(const std::filesystem::path& dir) const;
  static TrainingSet load(const std::filesystem::path& dir);
};

/// Inputs drawn from the modified prior: delta ~ U(a, b), then
/// x ~ N(mu0, (delta P)^-1). Sample i uses the stream derive_seed(seed, i).
struct TrainingInputs {
  std::vector<Vector> xs;
  std::vector<double> deltas;
};
TrainingInputs sample_training_inputs(const MarkovPrior& prior, double delta_lo, double delta_hi,
                                      int count, std::uint64_t seed);

/// Assemble Z_LF = [Y_LF, X] with HF outputs at the same coordinates.
/// Record order follows `xs` regardless of `workers`.
TrainingRecord make_record(const Vector& x, const DarcySolver& lf, const DarcySolver& hf);
TrainingSet build_training_set(const std::vector<Vector>& xs, const DarcySolver& lf,
                               const DarcySolver& hf, int workers = 1);

/// Z_LF for a single LF solution.
Matrix compose_lf_input(const VelocityMatrix& y_lf, const Vector& x_at_obs);

struct TrainConfig {
  int epochs = 4000;
  int batch_size = 128;
  OptimizerConfig optimizer{OptimizerKind::sgd, 1e-3};
  std::uint64_t seed = 0;
  int refine_epochs = 4000;
};

struct TrainTrace {
  std::vector<double> loss;
  bool diverged = false;
};

/// Diagonal Gaussian approximation N(M(Z), diag V(Z)) of p(Y_HF | Z_LF).
class ConditionalModel {
 public:
  ConditionalModel(const nn::Architecture& arch, std::uint64_t init_seed);

  const nn::Architecture& architecture() const { return net_->architecture(); }
  const Standardization& stats() const { return stats_; }
  void set_stats(const Standardization& s) { stats_ = s; }
  nn::Network& network() { return *net_; }
  const nn::Network& network() const { return *net_; }
  int pixels() const { return architecture().rows * architecture().cols; }

  struct Prediction {
    Matrix mean;      // pixels x d
    Matrix variance;  // pixels x d
  };

  /// Forward pass kept alive for a subsequent input_gradient call.
  struct Evaluation {
    Prediction prediction;
    nn::Network::Tape tape;
    nn::Tensor raw;
  };

  Prediction predict(const Matrix& z) const;
  Evaluation evaluate(const Matrix& z) const;

  /// (dM/dZ)^T seed_m + (dV/dZ)^T seed_v in destandardized units.
  Matrix input_gradient(const Evaluation& eval, const Matrix& seed_m, const Matrix& seed_v) const;
  Matrix input_gradient(const Matrix& z, const Matrix& seed_m, const Matrix& seed_v) const;

  void save(const std::filesystem::path& path) const;
  static ConditionalModel load(const std::filesystem::path& path);

  /// Standardized-space tensors for a record set.
  nn::Tensor to_input_tensor(const std::vector<const Matrix*>& zs) const;

 private:
  std::shared_ptr<nn::Network> net_;
  Standardization stats_;
};

/// Train `model` in place on `data` (minibatch Gaussian NLL in standardized
/// units). Stats are copied from `data`. On a non-finite loss training stops
/// and the weights of the last finite epoch are restored.
TrainTrace train(ConditionalModel& model, const TrainingSet& data, const TrainConfig& cfg,
                 int epochs);

struct TrainedConditional {
  ConditionalModel model;
  TrainTrace trace;
};
TrainedConditional train(const TrainingSet& data, const nn::Architecture& arch,
                         const TrainConfig& cfg);

/// Append `new_records`, recompute stats and continue training from the
/// current weights for cfg.refine_epochs. Empty `new_records` is a no-op.
TrainTrace refine(ConditionalModel& model, TrainingSet& data,
                  const std::vector<TrainingRecord>& new_records, const TrainConfig& cfg);

/// Mean Gaussian NLL of `data` under `model` in standardized units
/// (inference mode).
double mean_nll(const ConditionalModel& model, const std::vector<TrainingRecord>& records);

}  // namespace bmfia
