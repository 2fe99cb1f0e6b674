#include "bmfia/pipeline.hpp"

#include <cmath>
#include <fstream>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"
#include "bmfia/worker_pool.hpp"

namespace bmfia {

InferMode infer_mode_from_name(const std::string& name) {
  if (name == "bmfia") return InferMode::bmfia;
  if (name == "lf_only") return InferMode::lf_only;
  if (name == "hf_ref") return InferMode::hf_ref;
  throw ConfigError("unknown inference mode '" + name + "' (expected bmfia, lf_only or hf_ref)");
}

std::string infer_mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::bmfia: return "bmfia";
    case InferMode::lf_only: return "lf_only";
    case InferMode::hf_ref: return "hf_ref";
  }
  return "unknown";
}

namespace {

Mesh mesh_of(const std::array<int, 2>& n) { return Mesh(n[0], n[1]); }

const RunConfig& validated(const RunConfig& cfg) {
  cfg.validate();
  return cfg;
}

double effective_snr(double snr) { return snr > 0.0 ? snr : kInfiniteSnr; }

}  // namespace

Problem::Problem(const RunConfig& cfg)
    : cfg_(validated(cfg)),
      field_mesh_(mesh_of(cfg.mesh_field.field_mesh)),
      grid_(cfg.observations.rows, cfg.observations.cols),
      prior_(field_mesh_, cfg.mesh_field.prior_mean, cfg.mesh_field.delta_a0, cfg.mesh_field.delta_b0,
             cfg.mesh_field.eps_reg, cfg.mesh_field.periodic) {
  lf_ = std::make_unique<DarcySolver>(mesh_of(cfg.darcy.lf_mesh), PressureBC::from_name(cfg.darcy.lf_bc),
                                      grid_, field_mesh_);
  hf_ = make_hf_solver();
}

std::unique_ptr<DarcySolver> Problem::make_hf_solver() const {
  return std::make_unique<DarcySolver>(mesh_of(cfg_.darcy.hf_mesh), PressureBC::from_name(cfg_.darcy.hf_bc),
                                       grid_, field_mesh_);
}

Matrix lf_features(const DarcySolver& lf, const Vector& x, DarcySolution* solution) {
  DarcySolution sol = lf.solve(x);
  Matrix z = compose_lf_input(sol.y, lf.observation_interpolator().apply(x));
  if (solution) *solution = std::move(sol);
  return z;
}

nlohmann::json Calibration::to_json() const {
  return {{"residual_mean", residual_mean}, {"residual_var", residual_var},
          {"coverage_3sigma", coverage_3sigma}, {"mean_nll", mean_nll}, {"entries", entries}};
}

Calibration calibrate(const ConditionalModel& model, const std::vector<TrainingRecord>& records) {
  Calibration c;
  if (records.empty()) return c;
  double sum = 0.0;
  double sum2 = 0.0;
  std::size_t inside = 0;
  for (const auto& r : records) {
    const auto pred = model.predict(r.z);
    for (Eigen::Index i = 0; i < r.y.size(); ++i) {
      const double z = (r.y.data()[i] - pred.mean.data()[i]) / std::sqrt(pred.variance.data()[i]);
      sum += z;
      sum2 += z * z;
      inside += std::abs(z) <= 3.0 ? 1 : 0;
      ++c.entries;
    }
  }
  const double n = static_cast<double>(c.entries);
  c.residual_mean = sum / n;
  c.residual_var = sum2 / n - c.residual_mean * c.residual_mean;
  c.coverage_3sigma = static_cast<double>(inside) / n;
  c.mean_nll = mean_nll(model, records);
  return c;
}

// ------------------------------------------------------- log-posterior

struct PosteriorTarget::Eval {
  DarcySolution solution;
  Matrix m;
  Matrix v;
  ConditionalModel::Evaluation net;
};

PosteriorTarget::PosteriorTarget(const Problem& problem, const DarcySolver& lf,
                                 const ConditionalModel* model, const Matrix& y_obs, std::uint64_t seed)
    : problem_(problem), solver_(lf), model_(model), mf_(true), y_obs_(y_obs), seed_(seed),
      vbem_(problem.config().vbem_config()) {
  if (!model_) throw InvalidArgument("BMFIA target needs a trained conditional");
  const auto e = evaluate_model(problem_.prior().mean());
  phi_ = tau_init_from_residual(e.m - y_obs_);
}

PosteriorTarget::PosteriorTarget(const Problem& problem, const DarcySolver& solver, const Matrix& y_obs,
                                 std::uint64_t seed)
    : problem_(problem), solver_(solver), y_obs_(y_obs), seed_(seed),
      vbem_(problem.config().vbem_config()) {
  const auto e = evaluate_model(problem_.prior().mean());
  phi_ = tau_init_from_residual(e.m - y_obs_);
}

PosteriorTarget::Eval PosteriorTarget::evaluate_model(const Vector& x) const {
  Eval e;
  if (mf_) {
    const Matrix z = lf_features(solver_, x, &e.solution);
    e.net = model_->evaluate(z);
    e.m = e.net.prediction.mean;
    e.v = e.net.prediction.variance;
  } else {
    e.solution = solver_.solve(x);
    e.m = e.solution.y;
    e.v = Matrix::Zero(e.m.rows(), e.m.cols());
  }
  return e;
}

BatchEvaluation PosteriorTarget::operator()(const std::vector<Vector>& xs, int iteration) {
  const auto& cfg = problem_.config();
  const long hf_before = hf_guard_ ? hf_guard_->calls() : 0;
  std::vector<Eval> evals(xs.size());
  parallel_for(xs.size(), cfg.workers, [&](std::size_t i) { evals[i] = evaluate_model(xs[i]); });

  // E-steps shared by the batch: q(tau) by VB-EM, q(delta) from the
  // batch-mean quadratic form.
  std::vector<MfBlock> blocks;
  blocks.reserve(xs.size());
  for (const auto& e : evals) blocks.push_back({e.m, e.v});
  const auto vb = vbem_tau(blocks, y_obs_, cfg.likelihood.tau_a0, cfg.likelihood.tau_b0, phi_, vbem_,
                           derive_seed(seed_, static_cast<std::uint64_t>(iteration)));
  phi_ = vb.phi;
  tau_trace_.push_back({iteration, phi_.mu_tau, phi_.sigma(), vb.elbo_trace.empty() ? 0.0 : vb.elbo_trace.back()});

  double quad = 0.0;
  for (const auto& x : xs) quad += problem_.prior().quadratic_form(x);
  const GammaPosterior e_delta = problem_.prior().delta_posterior_from_quadratic(quad / static_cast<double>(xs.size()));

  BatchEvaluation out;
  out.values.resize(xs.size());
  out.grads.resize(xs.size());
  std::vector<char> clipped(xs.size(), 0);
  parallel_for(xs.size(), cfg.workers, [&](std::size_t i) {
    const auto& e = evals[i];
    const auto mg = marginalized_grads(e.m, e.v, y_obs_, vb.tau_samples);
    Vector g;
    if (mf_) {
      Matrix dz = model_->input_gradient(e.net, mg.dm, mg.dv);
      clipped[i] = clip_gradient(dz, cfg.likelihood.clip_threshold) ? 1 : 0;
      const VelocityMatrix dy = dz.leftCols(2);
      g = solver_.adjoint(e.solution, dy) + solver_.observation_interpolator().adjoint(dz.col(2));
    } else {
      g = solver_.adjoint(e.solution, VelocityMatrix(mg.dm));
    }
    const auto prior = problem_.prior().log_prior_frozen(xs[i], e_delta);
    out.values[i] = mg.loglik + prior.value;
    out.grads[i] = g + prior.grad;
  });
  for (char c : clipped) clipped_ += c;
  if (hf_guard_ && hf_guard_->calls() != hf_before) {
    throw NumericalError("HF solver was called during a BMFIA likelihood evaluation");
  }
  out.e_delta = e_delta.mean();
  out.mu_tau = phi_.mu_tau;
  return out;
}

// -------------------------------------------------------------- manifest

void update_manifest(const RunConfig& cfg, const RunPaths& paths, const std::string& key,
                     const nlohmann::json& section) {
  const auto file = paths.root / "manifest.json";
  nlohmann::json m = nlohmann::json::object();
  if (std::filesystem::exists(file)) m = io::read_json(file);
  m["config"] = cfg.to_json();
  m["config_hash"] = cfg.hash();
  nlohmann::json seeds{{"master", cfg.seed}};
  for (auto s : {SeedStream::truth, SeedStream::noise, SeedStream::training_inputs, SeedStream::network_init,
                 SeedStream::training, SeedStream::svi, SeedStream::vbem, SeedStream::refine,
                 SeedStream::report, SeedStream::holdout}) {
    seeds[stream_name(s)] = stream_seed(cfg.seed, s);
  }
  m["seeds"] = seeds;
  m["commands"][key] = section;
  io::write_json(file, m);
}

// --------------------------------------------------------------- truth

TruthArtifacts cmd_truth(const RunConfig& cfg, const RunPaths& paths) {
  Problem p(cfg);
  TruthArtifacts t;
  t.x_gt = make_ground_truth(p.prior(), cfg.mesh_field.delta_gt, stream_seed(cfg.seed, SeedStream::truth));
  t.y_gt = p.hf().solve(t.x_gt).y;
  t.obs = gen_observations(t.y_gt, effective_snr(cfg.observations.snr), stream_seed(cfg.seed, SeedStream::noise),
                           p.grid().rows(), p.grid().cols());
  const auto dir = paths.truth();
  io::write_field_csv(dir / "x_gt.csv", t.x_gt, p.field_mesh());
  io::write_velocity_csv(dir / "y_gt.csv", p.grid(), t.y_gt);
  io::write_velocity_csv(dir / "y_obs.csv", p.grid(), t.obs.y_obs);
  nlohmann::json meta{{"sigma2", t.obs.sigma2},
                      {"snr", std::isinf(t.obs.snr) ? nlohmann::json("inf") : nlohmann::json(t.obs.snr)},
                      {"noise_seed", t.obs.seed},
                      {"rows", t.obs.rows},
                      {"cols", t.obs.cols},
                      {"delta_gt", cfg.mesh_field.delta_gt},
                      {"hf_bc", cfg.darcy.hf_bc}};
  io::write_json(dir / "observations.json", meta);
  update_manifest(cfg, paths, "truth", meta);
  return t;
}

TruthArtifacts load_truth(const RunPaths& paths) {
  const auto dir = paths.truth();
  TruthArtifacts t;
  t.x_gt = io::read_field_csv(dir / "x_gt.csv");
  t.y_gt = io::read_velocity_csv(dir / "y_gt.csv");
  int rows = 0;
  int cols = 0;
  t.obs.y_obs = io::read_velocity_csv(dir / "y_obs.csv", &rows, &cols);
  const auto meta = io::read_json(dir / "observations.json");
  t.obs.sigma2 = meta.at("sigma2").get<double>();
  t.obs.snr = meta.at("snr").is_string() ? kInfiniteSnr : meta.at("snr").get<double>();
  t.obs.seed = meta.at("noise_seed").get<std::uint64_t>();
  t.obs.rows = rows;
  t.obs.cols = cols;
  return t;
}

// --------------------------------------------------------------- train

namespace {

/// Solve LF/HF pairs; on failure persist the completed records and rethrow.
std::vector<TrainingRecord> solve_pairs(const std::vector<Vector>& xs, const DarcySolver& lf,
                                        const DarcySolver& hf, int workers,
                                        const std::filesystem::path& partial_dir, int rows, int cols) {
  std::vector<TrainingRecord> recs(xs.size());
  std::vector<char> done(xs.size(), 0);
  try {
    parallel_for(xs.size(), workers, [&](std::size_t i) {
      try {
        recs[i] = make_record(xs[i], lf, hf);
        done[i] = 1;
      } catch (const Error& e) {
        throw SolverError("training sample " + std::to_string(i) + ": " + e.what());
      }
    });
  } catch (...) {
    TrainingSet partial;
    partial.rows = rows;
    partial.cols = cols;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (done[i]) partial.records.push_back(recs[i]);
    }
    if (!partial.records.empty()) {
      partial.recompute_stats();
      partial.save(partial_dir);
    }
    throw;
  }
  return recs;
}

void write_loss_csv(const std::filesystem::path& path, const TrainTrace& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < t.loss.size(); ++i) rows.push_back({static_cast<double>(i), t.loss[i]});
  io::write_table_csv(path, {"epoch", "loss"}, rows);
}

}  // namespace

TrainArtifacts cmd_train(const RunConfig& cfg, const RunPaths& paths) {
  Problem p(cfg);
  const auto dir = paths.train();
  const auto& cc = cfg.conditional;
  const auto inputs = sample_training_inputs(p.prior(), cc.delta_lo, cc.delta_hi, cc.n_train,
                                             stream_seed(cfg.seed, SeedStream::training_inputs));
  TrainingSet data;
  data.rows = p.grid().rows();
  data.cols = p.grid().cols();
  data.records = solve_pairs(inputs.xs, p.lf(), p.hf(), cfg.workers, dir / "dataset_partial", data.rows, data.cols);
  data.recompute_stats();
  data.save(dir / "dataset");

  TrainArtifacts art{data, ConditionalModel(cfg.architecture(), stream_seed(cfg.seed, SeedStream::network_init)),
                     {}, {}, p.hf().calls()};
  art.trace = train(art.model, art.data, cfg.train_config(), cc.epochs);
  art.model.save(dir / "model.bin");
  write_loss_csv(dir / "train_trace.csv", art.trace);

  // Held-out calibration on a separate diagnostic HF solver.
  long diagnostic_calls = 0;
  if (cc.n_holdout > 0) {
    const auto hold = sample_training_inputs(p.prior(), cc.delta_lo, cc.delta_hi, cc.n_holdout,
                                             stream_seed(cfg.seed, SeedStream::holdout));
    auto diag = p.make_hf_solver();
    const auto recs = solve_pairs(hold.xs, p.lf(), *diag, cfg.workers, dir / "holdout_partial", data.rows, data.cols);
    art.calibration = calibrate(art.model, recs);
    diagnostic_calls = diag->calls();
  }
  nlohmann::json meta{{"n_records", art.data.size()},
                      {"hf_calls", art.hf_calls},
                      {"hf_calls_diagnostic", diagnostic_calls},
                      {"epochs_run", art.trace.loss.size()},
                      {"final_loss", art.trace.loss.empty() ? 0.0 : art.trace.loss.back()},
                      {"diverged", art.trace.diverged},
                      {"calibration", art.calibration.to_json()}};
  io::write_json(dir / "train.json", meta);
  update_manifest(cfg, paths, "train", meta);
  return art;
}

// ---------------------------------------------------------------- infer

namespace {

std::vector<TrainingRecord> refinement_records(const Problem& p, const SparseGaussian& q, int count,
                                               std::uint64_t seed, const std::filesystem::path& partial) {
  if (count <= 0) return {};
  const auto draws = q.sample(count, seed);
  return solve_pairs(draws.xs, p.lf(), p.hf(), p.config().workers, partial, p.grid().rows(), p.grid().cols());
}

void write_tau_trace(const std::filesystem::path& path, const std::vector<PosteriorTarget::TauRecord>& t) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : t) rows.push_back({static_cast<double>(r.iteration), r.mu_tau, r.sigma_tau, r.elbo});
  io::write_table_csv(path, {"iteration", "mu_tau", "sigma_tau", "elbo"}, rows);
}

}  // namespace

InferArtifacts cmd_infer(const RunConfig& cfg, const RunPaths& paths, InferMode mode) {
  Problem p(cfg);
  const auto truth = load_truth(paths);
  if (truth.obs.y_obs.rows() != p.grid().size()) {
    throw ConfigError("stored observations do not match the configured grid");
  }
  const Matrix y_obs = truth.obs.y_obs;
  const auto dir = paths.infer(mode);
  std::filesystem::create_directories(dir);

  InferArtifacts art;
  const std::uint64_t vbem_seed = stream_seed(cfg.seed, SeedStream::vbem);
  std::unique_ptr<ConditionalModel> model;
  TrainingSet data;
  std::unique_ptr<PosteriorTarget> target;
  const DarcySolver* solver = nullptr;

  if (mode == InferMode::bmfia) {
    model = std::make_unique<ConditionalModel>(ConditionalModel::load(paths.train() / "model.bin"));
    data = TrainingSet::load(paths.train() / "dataset");
    art.hf_calls_training = io::read_json(paths.train() / "train.json").at("hf_calls").get<long>();
    target = std::make_unique<PosteriorTarget>(p, p.lf(), model.get(), y_obs, vbem_seed);
    target->guard_hf(&p.hf());
    solver = &p.lf();
  } else {
    solver = mode == InferMode::lf_only ? &p.lf() : &p.hf();
    target = std::make_unique<PosteriorTarget>(p, *solver, y_obs, vbem_seed);
  }

  RefineHook hook;
  const int n_refine = cfg.conditional.refine_samples;
  if (mode == InferMode::bmfia && n_refine > 0) {
    hook = [&](int it, const SparseGaussian& q) {
      const long before = p.hf().calls();
      const auto recs = refinement_records(p, q, n_refine,
                                           derive_seed(stream_seed(cfg.seed, SeedStream::refine), static_cast<std::uint64_t>(it)),
                                           dir / "refine_partial");
      art.hf_calls_refine += p.hf().calls() - before;
      refine(*model, data, recs, cfg.train_config());
      target->set_model(model.get());
      return "refine+" + std::to_string(recs.size());
    };
  }

  const long hf_start = p.hf().calls();
  const long solver_start = solver->calls();
  SparseGaussian q0(p.prior().mean(), cfg.svi.bandwidth, cfg.svi.init_std);
  auto svi_cfg = cfg.svi_config(stream_seed(cfg.seed, SeedStream::svi));
  svi_cfg.checkpoint_path = dir / "q_failed.bin";
  auto result = run_inference([&](const std::vector<Vector>& xs, int it) { return (*target)(xs, it); },
                              std::move(q0), svi_cfg, hook);
  art.q = std::move(result.q);
  art.trace = std::move(result.trace);
  art.hf_calls_inference = p.hf().calls() - hf_start - art.hf_calls_refine;
  art.solver_calls = solver->calls() - solver_start;

  art.q.save(dir / "q.bin");
  art.trace.write_csv(dir / "trace.csv");
  write_tau_trace(dir / "tau_trace.csv", target->tau_trace());
  if (mode == InferMode::bmfia && art.hf_calls_refine > 0) {
    model->save(dir / "model_refined.bin");
    data.save(dir / "dataset_refined");
  }
  art.report = make_report(art.q, p.field_mesh(), cfg.report.mc_samples, stream_seed(cfg.seed, SeedStream::report),
                           &truth.x_gt);
  art.report.write(dir / "report", p.field_mesh());

  nlohmann::json meta{{"mode", infer_mode_name(mode)},
                      {"iterations", art.trace.records.size()},
                      {"model_calls", art.trace.model_calls},
                      {"solver_calls", art.solver_calls},
                      {"hf_calls_training", art.hf_calls_training},
                      {"hf_calls_refine", art.hf_calls_refine},
                      {"hf_calls_inference", art.hf_calls_inference},
                      {"clipped_gradients", target->clipped()},
                      {"mu_tau", target->tau().mu_tau},
                      {"sigma_tau", target->tau().sigma()},
                      {"coverage_90", art.report.coverage}};
  io::write_json(dir / "run.json", meta);
  update_manifest(cfg, paths, "infer_" + infer_mode_name(mode), meta);
  return art;
}

TrainTrace cmd_refine(const RunConfig& cfg, const RunPaths& paths) {
  Problem p(cfg);
  const auto q = SparseGaussian::load(paths.infer(InferMode::bmfia) / "q.bin");
  auto model = ConditionalModel::load(paths.train() / "model.bin");
  auto data = TrainingSet::load(paths.train() / "dataset");
  const auto recs = refinement_records(p, q, cfg.conditional.refine_samples,
                                       stream_seed(cfg.seed, SeedStream::refine), paths.train() / "refine_partial");
  const auto trace = refine(model, data, recs, cfg.train_config());
  model.save(paths.train() / "model.bin");
  data.save(paths.train() / "dataset");
  auto meta = io::read_json(paths.train() / "train.json");
  meta["hf_calls"] = meta.at("hf_calls").get<long>() + p.hf().calls();
  meta["n_records"] = data.size();
  io::write_json(paths.train() / "train.json", meta);
  update_manifest(cfg, paths, "refine", {{"added", recs.size()}, {"hf_calls", p.hf().calls()}});
  return trace;
}

PosteriorReport cmd_report(const RunConfig& cfg, const RunPaths& paths, InferMode mode) {
  Problem p(cfg);
  const auto dir = paths.infer(mode);
  const auto q = SparseGaussian::load(dir / "q.bin");
  Vector x_gt;
  const bool has_truth = std::filesystem::exists(paths.truth() / "x_gt.csv");
  if (has_truth) x_gt = io::read_field_csv(paths.truth() / "x_gt.csv");
  auto rep = make_report(q, p.field_mesh(), cfg.report.mc_samples, stream_seed(cfg.seed, SeedStream::report),
                         has_truth ? &x_gt : nullptr);
  rep.write(dir / "report", p.field_mesh());
  return rep;
}

}  // namespace bmfia
