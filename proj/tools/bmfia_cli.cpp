// Command line front end for the multi-fidelity inverse analysis workflow.
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bmfia/config.hpp"
#include "bmfia/error.hpp"
#include "bmfia/gradcheck.hpp"
#include "bmfia/io.hpp"
#include "bmfia/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = "bmfia_run";
  std::string preset = "paper";
};

bmfia::RunConfig resolve_config(const GlobalOptions& g) {
  auto cfg = bmfia::RunConfig::preset_by_name(g.preset);
  if (!g.config_path.empty()) cfg = bmfia::RunConfig::from_json(bmfia::io::read_json(g.config_path), cfg);
  if (g.seed) cfg.seed = *g.seed;
  if (g.workers) cfg.workers = *g.workers;
  cfg.validate();
  return cfg;
}

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "infinity") return 0.0;
  try {
    const double v = std::stod(s);
    if (!(v > 0.0)) throw bmfia::ConfigError("--snr must be positive or 'inf'");
    return v;
  } catch (const std::logic_error&) {
    throw bmfia::ConfigError("--snr must be a number or 'inf', got '" + s + "'");
  }
}

void print_report_summary(const bmfia::PosteriorReport& r) {
  std::printf("report: %d Monte-Carlo samples", r.mc_samples);
  if (!std::isnan(r.coverage)) std::printf(", 90%% band coverage of ground truth %.3f", r.coverage);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian multi-fidelity inverse analysis for Darcy flow"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config overlay")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--workers", g.workers, "worker threads for simulation batches");
  app.add_option("--out", g.out, "run directory");
  app.add_option("--preset", g.preset, "base configuration")->check(CLI::IsMember({"paper", "desk"}));

  auto* truth = app.add_subcommand("truth", "sample the ground truth and generate observations");
  std::string snr;
  truth->add_option("--snr", snr, "signal-to-noise ratio or 'inf'");

  app.add_subcommand("train", "sample training inputs, run LF/HF pairs and train the conditional");

  auto* infer = app.add_subcommand("infer", "variational inference");
  std::string mode = "bmfia";
  infer->add_option("--mode", mode, "bmfia, lf_only or hf_ref")
      ->check(CLI::IsMember({"bmfia", "lf_only", "hf_ref"}));

  app.add_subcommand("refine", "extend the training set from the BMFIA posterior and retrain");

  auto* report = app.add_subcommand("report", "posterior summaries of the permeability");
  std::string report_mode = "bmfia";
  report->add_option("--mode", report_mode, "which inference run to summarize")
      ->check(CLI::IsMember({"bmfia", "lf_only", "hf_ref"}));

  app.add_subcommand("gradcheck", "finite-difference audit of all gradient paths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto cfg = resolve_config(g);
    const bmfia::RunPaths paths{g.out};
    if (*truth) {
      if (!snr.empty()) cfg.observations.snr = parse_snr(snr);
      const auto t = bmfia::cmd_truth(cfg, paths);
      std::printf("truth: %ld field DoFs, %ld observations, sigma2 = %.6g -> %s\n",
                  static_cast<long>(t.x_gt.size()), static_cast<long>(t.obs.y_obs.rows()), t.obs.sigma2,
                  paths.truth().string().c_str());
    } else if (app.got_subcommand("train")) {
      const auto t = bmfia::cmd_train(cfg, paths);
      std::printf("train: %zu records, %ld HF calls, final loss %.4f%s\n", t.data.size(), t.hf_calls,
                  t.trace.loss.empty() ? 0.0 : t.trace.loss.back(), t.trace.diverged ? " (diverged)" : "");
      std::printf("calibration: residual mean %.3f, var %.3f, 3-sigma coverage %.3f\n",
                  t.calibration.residual_mean, t.calibration.residual_var, t.calibration.coverage_3sigma);
    } else if (*infer) {
      const auto r = bmfia::cmd_infer(cfg, paths, bmfia::infer_mode_from_name(mode));
      std::printf("infer[%s]: %zu iterations, %ld model calls, HF calls during inference %ld, refine %ld\n",
                  mode.c_str(), r.trace.records.size(), r.trace.model_calls, r.hf_calls_inference,
                  r.hf_calls_refine);
      print_report_summary(r.report);
    } else if (app.got_subcommand("refine")) {
      const auto t = bmfia::cmd_refine(cfg, paths);
      std::printf("refine: %zu epochs%s\n", t.loss.size(), t.diverged ? " (diverged)" : "");
    } else if (*report) {
      print_report_summary(bmfia::cmd_report(cfg, paths, bmfia::infer_mode_from_name(report_mode)));
    } else if (app.got_subcommand("gradcheck")) {
      const auto rep = bmfia::run_gradcheck(cfg.seed);
      rep.print(std::cout);
      return rep.all_passed() ? 0 : 4;
    }
  } catch (const bmfia::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
