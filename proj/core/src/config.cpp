#include "bmfia/config.hpp"

#include <cstdio>

#include "bmfia/darcy.hpp"
#include "bmfia/error.hpp"

namespace bmfia {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MeshFieldConfig, field_mesh, prior_mean, eps_reg, periodic, delta_a0,
                                   delta_b0, delta_gt)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DarcyConfig, lf_mesh, hf_mesh, lf_bc, hf_bc)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ObservationConfig, rows, cols, snr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ConditionalConfig, n_train, delta_lo, delta_hi, channels, bottleneck,
                                   dropout, nugget, pooling, epochs, batch_size, optimizer,
                                   learning_rate, refine_epochs, refine_samples, n_holdout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LikelihoodConfig, tau_a0, tau_b0, clip_threshold, vbem_steps, n_tau,
                                   vbem_learning_rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SviSection, batch_size, max_calls, iterations, bandwidth, optimizer,
                                   learning_rate, lr_decay_steps, init_std, refine_at)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReportConfig, mc_samples)

namespace {

void reject_unknown(const nlohmann::json& patch, const nlohmann::json& base, const std::string& path) {
  if (!patch.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + it.key() + "'");
    if (base.at(it.key()).is_object()) reject_unknown(it.value(), base.at(it.key()), path + it.key() + ".");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

RunConfig RunConfig::paper() { return RunConfig{}; }

RunConfig RunConfig::desk() {
  RunConfig c;
  c.preset = "desk";
  c.mesh_field.field_mesh = {16, 16};
  c.mesh_field.eps_reg = 0.05;
  c.mesh_field.delta_gt = 8.0;
  c.darcy.lf_mesh = {16, 16};
  c.darcy.hf_mesh = {32, 32};
  c.observations.rows = 20;
  c.observations.cols = 20;
  c.conditional.delta_lo = 2.0;
  c.conditional.delta_hi = 20.0;
  c.conditional.channels = {8, 16, 32};
  c.conditional.bottleneck = 64;
  c.conditional.epochs = 600;
  c.conditional.batch_size = 32;
  c.conditional.optimizer = "adam";
  c.conditional.learning_rate = 1e-3;
  c.conditional.refine_epochs = 150;
  c.svi.optimizer = "adam";
  c.svi.learning_rate = 1e-2;
  c.svi.lr_decay_steps = 200.0;
  c.report.mc_samples = 10000;
  return c;
}

RunConfig RunConfig::preset_by_name(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

void RunConfig::validate() const {
  for (int n : mesh_field.field_mesh) require(n >= 1, "field mesh needs at least one element per side");
  for (int n : darcy.lf_mesh) require(n >= 1, "LF mesh needs at least one element per side");
  for (int n : darcy.hf_mesh) require(n >= 1, "HF mesh needs at least one element per side");
  require(mesh_field.eps_reg >= 0.0, "eps_reg must be non-negative");
  require(mesh_field.delta_a0 > 0.0 && mesh_field.delta_b0 > 0.0, "delta hyper-prior needs a0, b0 > 0");
  require(mesh_field.delta_gt > 0.0, "delta_gt must be positive");
  require(observations.rows >= 1 && observations.cols >= 1, "observation grid must be non-empty");
  try {
    PressureBC::from_name(darcy.lf_bc);
    PressureBC::from_name(darcy.hf_bc);
    optimizer_from_name(conditional.optimizer);
    optimizer_from_name(svi.optimizer);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  require(conditional.pooling == "max" || conditional.pooling == "average", "pooling must be max or average");
  require(conditional.n_train >= 1, "n_train must be at least 1");
  require(conditional.delta_lo > 0.0 && conditional.delta_lo < conditional.delta_hi,
          "training delta range needs 0 < delta_lo < delta_hi");
  require(conditional.epochs >= 0 && conditional.refine_epochs >= 0, "epochs must be non-negative");
  require(conditional.batch_size >= 1, "training batch size must be at least 1");
  require(conditional.refine_samples >= 0 && conditional.n_holdout >= 0, "sample counts must be non-negative");
  require(conditional.dropout >= 0.0 && conditional.dropout < 1.0, "dropout must lie in [0, 1)");
  require(conditional.nugget > 0.0, "nugget must be positive");
  require(likelihood.tau_a0 > 0.0 && likelihood.tau_b0 > 0.0, "tau prior needs a0, b0 > 0");
  require(likelihood.clip_threshold > 0.0, "clip threshold must be positive");
  require(likelihood.vbem_steps >= 0 && likelihood.n_tau >= 1, "VB-EM needs steps >= 0 and n_tau >= 1");
  require(svi.batch_size >= 1 && svi.max_calls >= svi.batch_size, "SVI budget must allow one batch");
  require(svi.bandwidth >= 0, "bandwidth must be non-negative");
  require(svi.init_std > 0.0 && svi.learning_rate > 0.0, "SVI init_std and learning rate must be positive");
  require(report.mc_samples >= 1, "report needs at least one Monte-Carlo sample");
  require(workers >= 1, "workers must be at least 1");
}

nlohmann::json RunConfig::to_json() const {
  return {{"preset", preset},         {"seed", seed},
          {"workers", workers},       {"mesh_field", mesh_field},
          {"darcy", darcy},           {"observations", observations},
          {"conditional", conditional}, {"likelihood", likelihood},
          {"svi", svi},               {"report", report}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  nlohmann::json merged = base.to_json();
  reject_unknown(j, merged, "");
  if (j.contains("preset") && j.at("preset").get<std::string>() != base.preset) {
    merged = preset_by_name(j.at("preset").get<std::string>()).to_json();
  }
  merged.merge_patch(j);
  RunConfig c;
  try {
    c.preset = merged.at("preset").get<std::string>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.workers = merged.at("workers").get<int>();
    c.mesh_field = merged.at("mesh_field").get<MeshFieldConfig>();
    c.darcy = merged.at("darcy").get<DarcyConfig>();
    c.observations = merged.at("observations").get<ObservationConfig>();
    c.conditional = merged.at("conditional").get<ConditionalConfig>();
    c.likelihood = merged.at("likelihood").get<LikelihoodConfig>();
    c.svi = merged.at("svi").get<SviSection>();
    c.report = merged.at("report").get<ReportConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

std::string RunConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nn::Architecture RunConfig::architecture() const {
  nn::Architecture a;
  a.rows = observations.rows;
  a.cols = observations.cols;
  a.channels = conditional.channels;
  a.bottleneck = conditional.bottleneck;
  a.dropout = conditional.dropout;
  a.nugget = conditional.nugget;
  a.pooling = conditional.pooling == "average" ? nn::PoolKind::average : nn::PoolKind::max;
  return a;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = conditional.epochs;
  t.batch_size = conditional.batch_size;
  t.optimizer = {optimizer_from_name(conditional.optimizer), conditional.learning_rate};
  t.seed = stream_seed(seed, SeedStream::training);
  t.refine_epochs = conditional.refine_epochs;
  return t;
}

SviConfig RunConfig::svi_config(std::uint64_t s) const {
  SviConfig c;
  c.batch_size = svi.batch_size;
  c.max_calls = svi.max_calls;
  c.iterations = svi.iterations;
  c.optimizer = {optimizer_from_name(svi.optimizer), svi.learning_rate};
  c.lr_decay_steps = svi.lr_decay_steps;
  c.seed = s;
  c.refine_at = svi.refine_at;
  return c;
}

VbemConfig RunConfig::vbem_config() const {
  VbemConfig v;
  v.steps = likelihood.vbem_steps;
  v.n_tau = likelihood.n_tau;
  v.optimizer = {OptimizerKind::adam, likelihood.vbem_learning_rate};
  return v;
}

std::uint64_t stream_seed(std::uint64_t master, SeedStream stream) {
  return derive_seed(master, static_cast<std::uint64_t>(stream));
}

std::string stream_name(SeedStream stream) {
  switch (stream) {
    case SeedStream::truth: return "truth";
    case SeedStream::noise: return "noise";
    case SeedStream::training_inputs: return "training_inputs";
    case SeedStream::network_init: return "network_init";
    case SeedStream::training: return "training";
    case SeedStream::svi: return "svi";
    case SeedStream::vbem: return "vbem";
    case SeedStream::refine: return "refine";
    case SeedStream::report: return "report";
    case SeedStream::holdout: return "holdout";
  }
  return "unknown";
}

}  // namespace bmfia
