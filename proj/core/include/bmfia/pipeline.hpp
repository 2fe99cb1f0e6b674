#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bmfia/conditional.hpp"
#include "bmfia/config.hpp"
#include "bmfia/darcy.hpp"
#include "bmfia/markov_prior.hpp"
#include "bmfia/mf_likelihood.hpp"
#include "bmfia/observations.hpp"
#include "bmfia/report.hpp"
#include "bmfia/svi.hpp"

namespace bmfia {

enum class InferMode { bmfia, lf_only, hf_ref };
InferMode infer_mode_from_name(const std::string& name);
std::string infer_mode_name(InferMode mode);

/// Meshes, prior and solvers built from a validated config.
class Problem {
 public:
  explicit Problem(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  const Mesh& field_mesh() const { return field_mesh_; }
  const ObservationGrid& grid() const { return grid_; }
  const MarkovPrior& prior() const { return prior_; }
  const DarcySolver& lf() const { return *lf_; }
  const DarcySolver& hf() const { return *hf_; }
  /// A fresh HF solver with its own call counter.
  std::unique_ptr<DarcySolver> make_hf_solver() const;

 private:
  RunConfig cfg_;
  Mesh field_mesh_;
  ObservationGrid grid_;
  MarkovPrior prior_;
  std::unique_ptr<DarcySolver> lf_;
  std::unique_ptr<DarcySolver> hf_;
};

/// Output directory layout under --out.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path truth() const { return root / "truth"; }
  std::filesystem::path train() const { return root / "train"; }
  std::filesystem::path infer(InferMode m) const { return root / ("infer_" + infer_mode_name(m)); }
};

/// Z_LF = [Y_LF(x), S_obs x] for one field.
Matrix lf_features(const DarcySolver& lf, const Vector& x, DarcySolution* solution = nullptr);

/// Held-out calibration of the conditional in standardized residual units
/// r = (y - M) / sqrt(V).
struct Calibration {
  double residual_mean = 0.0;
  double residual_var = 0.0;
  double coverage_3sigma = 0.0;
  double mean_nll = 0.0;
  std::size_t entries = 0;
  nlohmann::json to_json() const;
};
Calibration calibrate(const ConditionalModel& model, const std::vector<TrainingRecord>& records);

/// Unnormalized log-posterior for SVI: likelihood (MF or plain Gaussian
/// through a solver) plus the EM-treated Markov prior, with tau handled by
/// a warm-started log-normal VB-EM shared across the batch.
class PosteriorTarget {
 public:
  struct TauRecord {
    int iteration;
    double mu_tau;
    double sigma_tau;
    double elbo;
  };

  /// BMFIA target: LF solve + conditional.
  PosteriorTarget(const Problem& problem, const DarcySolver& lf, const ConditionalModel* model,
                  const Matrix& y_obs, std::uint64_t seed);
  /// Reference target: plain Gaussian likelihood through `solver`.
  PosteriorTarget(const Problem& problem, const DarcySolver& solver, const Matrix& y_obs,
                  std::uint64_t seed);

  BatchEvaluation operator()(const std::vector<Vector>& xs, int iteration);

  /// Swap in a refined conditional (BMFIA only).
  void set_model(const ConditionalModel* model) { model_ = model; }

  const TauVariational& tau() const { return phi_; }
  const std::vector<TauRecord>& tau_trace() const { return tau_trace_; }
  long clipped() const { return clipped_; }
  /// Evaluations throw if this solver is called while they run.
  void guard_hf(const DarcySolver* hf) { hf_guard_ = hf; }

 private:
  struct Eval;
  Eval evaluate_model(const Vector& x) const;

  const Problem& problem_;
  const DarcySolver& solver_;
  const ConditionalModel* model_ = nullptr;
  bool mf_ = false;
  Matrix y_obs_;
  std::uint64_t seed_;
  TauVariational phi_;
  VbemConfig vbem_;
  std::vector<TauRecord> tau_trace_;
  long clipped_ = 0;
  const DarcySolver* hf_guard_ = nullptr;
};

struct TruthArtifacts {
  Vector x_gt;
  VelocityMatrix y_gt;
  ObservationSet obs;
};
TruthArtifacts cmd_truth(const RunConfig& cfg, const RunPaths& paths);
TruthArtifacts load_truth(const RunPaths& paths);

struct TrainArtifacts {
  TrainingSet data;
  ConditionalModel model;
  TrainTrace trace;
  Calibration calibration;
  long hf_calls = 0;
};
TrainArtifacts cmd_train(const RunConfig& cfg, const RunPaths& paths);

struct InferArtifacts {
  SparseGaussian q;
  SviTrace trace;
  PosteriorReport report;
  long hf_calls_training = 0;
  long hf_calls_refine = 0;
  long hf_calls_inference = 0;
  long solver_calls = 0;
};
InferArtifacts cmd_infer(const RunConfig& cfg, const RunPaths& paths, InferMode mode);

/// Append cfg.conditional.refine_samples pairs drawn from the BMFIA
/// posterior and continue training the stored conditional.
TrainTrace cmd_refine(const RunConfig& cfg, const RunPaths& paths);

PosteriorReport cmd_report(const RunConfig& cfg, const RunPaths& paths, InferMode mode);

/// Merge `section` into <root>/manifest.json together with the config hash
/// and all derived seeds.
void update_manifest(const RunConfig& cfg, const RunPaths& paths, const std::string& key,
                     const nlohmann::json& section);

}  // namespace bmfia
