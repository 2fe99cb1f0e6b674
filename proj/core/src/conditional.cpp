#include "bmfia/conditional.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"
#include "bmfia/worker_pool.hpp"

namespace bmfia {

namespace {

constexpr int kModelFormatVersion = 1;

ChannelStats channel_stats(const std::vector<TrainingRecord>& records, bool inputs) {
  const Eigen::Index channels = inputs ? records.front().z.cols() : records.front().y.cols();
  ChannelStats s;
  s.mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.stddev.assign(static_cast<std::size_t>(channels), 0.0);
  double count = 0.0;
  for (const auto& r : records) {
    const Matrix& m = inputs ? r.z : r.y;
    for (Eigen::Index c = 0; c < channels; ++c) s.mean[static_cast<std::size_t>(c)] += m.col(c).sum();
    count += static_cast<double>(m.rows());
  }
  for (auto& v : s.mean) v /= count;
  for (const auto& r : records) {
    const Matrix& m = inputs ? r.z : r.y;
    for (Eigen::Index c = 0; c < channels; ++c) {
      s.stddev[static_cast<std::size_t>(c)] +=
          (m.col(c).array() - s.mean[static_cast<std::size_t>(c)]).square().sum();
    }
  }
  for (auto& v : s.stddev) v = std::max(std::sqrt(v / count), Standardization::kStdFloor);
  return s;
}

Matrix affine(const Matrix& m, const ChannelStats& s, bool forward) {
  if (static_cast<std::size_t>(m.cols()) != s.mean.size()) {
    throw ShapeMismatch("channel count does not match standardization stats");
  }
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mu = s.mean[static_cast<std::size_t>(c)];
    const double sd = s.stddev[static_cast<std::size_t>(c)];
    if (forward) {
      out.col(c) = (m.col(c).array() - mu) / sd;
    } else {
      out.col(c) = m.col(c).array() * sd + mu;
    }
  }
  return out;
}

/// Pixel-layout matrices into an image batch zero-padded to the network grid.
nn::Tensor pixels_to_tensor(const std::vector<const Matrix*>& ms, const nn::Architecture& arch) {
  const int rows = arch.rows;
  const int cols = arch.cols;
  const int channels = static_cast<int>(ms.front()->cols());
  nn::Tensor t(static_cast<int>(ms.size()), channels, arch.padded_rows(), arch.padded_cols());
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const Matrix& m = *ms[k];
    if (m.rows() != static_cast<Eigen::Index>(rows) * cols || m.cols() != channels) {
      throw ShapeMismatch("record does not match the network grid");
    }
    for (int c = 0; c < channels; ++c) {
      for (int p = 0; p < rows * cols; ++p) t.at(static_cast<int>(k), c, p / cols, p % cols) = m(p, c);
    }
  }
  return t;
}

struct RawSplit {
  Matrix mean;
  Matrix raw_logvar;
};

RawSplit split_raw(const nn::Tensor& raw, int sample, int d, int rows, int cols) {
  const int pixels = rows * cols;
  RawSplit s{Matrix(pixels, d), Matrix(pixels, d)};
  for (int c = 0; c < d; ++c) {
    for (int p = 0; p < pixels; ++p) {
      s.mean(p, c) = raw.at(sample, c, p / cols, p % cols);
      s.raw_logvar(p, c) = raw.at(sample, d + c, p / cols, p % cols);
    }
  }
  return s;
}

/// Gaussian NLL in standardized units and its gradient w.r.t. the raw
/// network output; returns the summed loss over the unpadded pixels.
double nll_and_grad(const nn::Tensor& raw, const nn::Tensor& target, double nugget, double scale,
                    nn::Tensor* grad, int rows, int cols) {
  const int d = target.c;
  const int plane = raw.h * raw.w;
  double loss = 0.0;
  if (grad) *grad = nn::Tensor(raw.n, raw.shape());
  for (int n = 0; n < raw.n; ++n) {
    for (int c = 0; c < d; ++c) {
      const double* m = raw.sample(n) + static_cast<std::size_t>(c) * plane;
      const double* s = raw.sample(n) + static_cast<std::size_t>(d + c) * plane;
      const double* y = target.sample(n) + static_cast<std::size_t>(c) * plane;
      double* gm = grad ? grad->sample(n) + static_cast<std::size_t>(c) * plane : nullptr;
      double* gs = grad ? grad->sample(n) + static_cast<std::size_t>(d + c) * plane : nullptr;
      for (int q = 0; q < rows * cols; ++q) {
        const int p = (q / cols) * raw.w + q % cols;
        const double es = std::exp(s[p]);
        const double v = es + nugget;
        const double r = y[p] - m[p];
        loss += 0.5 * std::log(2.0 * std::numbers::pi * v) + 0.5 * r * r / v;
        if (grad) {
          gm[p] = scale * (-r / v);
          gs[p] = scale * (0.5 / v - 0.5 * r * r / (v * v)) * es;
        }
      }
    }
  }
  return loss;
}

}  // namespace

// ------------------------------------------------------ standardization

nlohmann::json ChannelStats::to_json() const { return {{"mean", mean}, {"std", stddev}}; }

ChannelStats ChannelStats::from_json(const nlohmann::json& j) {
  ChannelStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  return s;
}

Standardization Standardization::compute(const std::vector<TrainingRecord>& records) {
  if (records.empty()) throw InvalidArgument("cannot compute statistics of an empty training set");
  return {channel_stats(records, true), channel_stats(records, false)};
}

Matrix Standardization::standardize_input(const Matrix& z) const { return affine(z, input, true); }
Matrix Standardization::destandardize_input(const Matrix& z) const { return affine(z, input, false); }
Matrix Standardization::standardize_output(const Matrix& y) const { return affine(y, output, true); }
Matrix Standardization::destandardize_output(const Matrix& y) const { return affine(y, output, false); }

nlohmann::json Standardization::to_json() const {
  return {{"input", input.to_json()}, {"output", output.to_json()}};
}

Standardization Standardization::from_json(const nlohmann::json& j) {
  return {ChannelStats::from_json(j.at("input")), ChannelStats::from_json(j.at("output"))};
}

// --------------------------------------------------------- training set

void TrainingSet::validate() const {
  const Eigen::Index pixels = static_cast<Eigen::Index>(rows) * cols;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.z.rows() != pixels || r.y.rows() != pixels || r.z.cols() != 3 || r.y.cols() != 2) {
      throw ShapeMismatch("training record " + std::to_string(i) + " does not match grid " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
}

void TrainingSet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["rows"] = rows;
  manifest["cols"] = cols;
  manifest["count"] = records.size();
  manifest["stats"] = stats.to_json();
  manifest["columns"] = {"u1_lf", "u2_lf", "x", "u1_hf", "u2_hf"};
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.csv", i);
    files.push_back(name);
    std::vector<std::vector<double>> table;
    table.reserve(static_cast<std::size_t>(records[i].z.rows()));
    for (Eigen::Index p = 0; p < records[i].z.rows(); ++p) {
      table.push_back({records[i].z(p, 0), records[i].z(p, 1), records[i].z(p, 2), records[i].y(p, 0),
                       records[i].y(p, 1)});
    }
    io::write_table_csv(dir / name, {"u1_lf", "u2_lf", "x", "u1_hf", "u2_hf"}, table);
  }
  manifest["samples"] = files;
  io::write_json(dir / "manifest.json", manifest);
}

TrainingSet TrainingSet::load(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  TrainingSet set;
  set.rows = manifest.at("rows").get<int>();
  set.cols = manifest.at("cols").get<int>();
  const int pixels = set.rows * set.cols;
  for (const auto& name : manifest.at("samples")) {
    const auto path = dir / name.get<std::string>();
    std::ifstream in(path);
    if (!in) throw MissingArtifact("missing training sample '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    TrainingRecord rec{Matrix(pixels, 3), Matrix(pixels, 2)};
    for (int p = 0; p < pixels; ++p) {
      if (!std::getline(in, line) ||
          std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &rec.z(p, 0), &rec.z(p, 1), &rec.z(p, 2),
                      &rec.y(p, 0), &rec.y(p, 1)) != 5) {
        throw MissingArtifact("training sample '" + path.string() + "' is truncated");
      }
    }
    set.records.push_back(std::move(rec));
  }
  set.stats = Standardization::from_json(manifest.at("stats"));
  return set;
}

TrainingInputs sample_training_inputs(const MarkovPrior& prior, double delta_lo, double delta_hi,
                                      int count, std::uint64_t seed) {
  if (!(delta_lo > 0.0) || !(delta_lo < delta_hi)) {
    throw InvalidArgument("training precision range needs 0 < a < b");
  }
  TrainingInputs out;
  out.xs.reserve(static_cast<std::size_t>(count));
  out.deltas.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> u(delta_lo, delta_hi);
    const double delta = u(rng);
    out.deltas.push_back(delta);
    out.xs.push_back(prior.sample(delta, rng, 1).front());
  }
  return out;
}

Matrix compose_lf_input(const VelocityMatrix& y_lf, const Vector& x_at_obs) {
  if (x_at_obs.size() != y_lf.rows()) throw ShapeMismatch("X does not match LF output rows");
  Matrix z(y_lf.rows(), 3);
  z.col(0) = y_lf.col(0);
  z.col(1) = y_lf.col(1);
  z.col(2) = x_at_obs;
  return z;
}

TrainingRecord make_record(const Vector& x, const DarcySolver& lf, const DarcySolver& hf) {
  const auto lf_sol = lf.solve(x);
  const auto hf_sol = hf.solve(x);
  TrainingRecord rec;
  rec.z = compose_lf_input(lf_sol.y, lf.observation_interpolator().apply(x));
  rec.y = hf_sol.y;
  return rec;
}

TrainingSet build_training_set(const std::vector<Vector>& xs, const DarcySolver& lf,
                               const DarcySolver& hf, int workers) {
  if (xs.empty()) throw InvalidArgument("training set needs at least one input");
  if (lf.grid().rows() != hf.grid().rows() || lf.grid().cols() != hf.grid().cols()) {
    throw ShapeMismatch("LF and HF solvers use different observation grids");
  }
  TrainingSet set;
  set.rows = lf.grid().rows();
  set.cols = lf.grid().cols();
  set.records.resize(xs.size());
  parallel_for(xs.size(), workers, [&](std::size_t i) {
    try {
      set.records[i] = make_record(xs[i], lf, hf);
    } catch (const Error& e) {
      throw SolverError("training sample " + std::to_string(i) + ": " + e.what());
    }
  });
  set.recompute_stats();
  return set;
}

// ---------------------------------------------------------------- model

ConditionalModel::ConditionalModel(const nn::Architecture& arch, std::uint64_t init_seed)
    : net_(std::make_shared<nn::Network>(arch, init_seed)) {
  stats_.input.mean.assign(static_cast<std::size_t>(arch.in_channels), 0.0);
  stats_.input.stddev.assign(static_cast<std::size_t>(arch.in_channels), 1.0);
  stats_.output.mean.assign(static_cast<std::size_t>(arch.out_dims), 0.0);
  stats_.output.stddev.assign(static_cast<std::size_t>(arch.out_dims), 1.0);
}

nn::Tensor ConditionalModel::to_input_tensor(const std::vector<const Matrix*>& zs) const {
  std::vector<Matrix> standardized;
  standardized.reserve(zs.size());
  std::vector<const Matrix*> ptrs;
  for (const Matrix* z : zs) standardized.push_back(stats_.standardize_input(*z));
  for (const auto& m : standardized) ptrs.push_back(&m);
  return pixels_to_tensor(ptrs, architecture());
}

ConditionalModel::Evaluation ConditionalModel::evaluate(const Matrix& z) const {
  if (z.rows() != pixels() || z.cols() != architecture().in_channels) {
    throw ShapeMismatch("conditional input has shape " + std::to_string(z.rows()) + "x" +
                        std::to_string(z.cols()) + ", expected " + std::to_string(pixels()) + "x" +
                        std::to_string(architecture().in_channels));
  }
  Evaluation ev;
  const nn::Tensor in = to_input_tensor({&z});
  nn::ForwardContext ctx;
  ev.raw = net_->forward(in, ev.tape, ctx);
  const int d = architecture().out_dims;
  const auto split = split_raw(ev.raw, 0, d, architecture().rows, architecture().cols);
  ev.prediction.mean = stats_.destandardize_output(split.mean);
  ev.prediction.variance.resize(pixels(), d);
  for (int c = 0; c < d; ++c) {
    const double sd = stats_.output.stddev[static_cast<std::size_t>(c)];
    ev.prediction.variance.col(c) =
        (split.raw_logvar.col(c).array().exp() + architecture().nugget) * sd * sd;
  }
  return ev;
}

ConditionalModel::Prediction ConditionalModel::predict(const Matrix& z) const {
  return evaluate(z).prediction;
}

Matrix ConditionalModel::input_gradient(const Evaluation& eval, const Matrix& seed_m,
                                        const Matrix& seed_v) const {
  const int d = architecture().out_dims;
  if (seed_m.rows() != pixels() || seed_v.rows() != pixels() || seed_m.cols() != d ||
      seed_v.cols() != d) {
    throw ShapeMismatch("input_gradient seeds do not match the output shape");
  }
  const int cols = architecture().cols;
  nn::Tensor g(1, eval.raw.shape());
  for (int c = 0; c < d; ++c) {
    const double sd = stats_.output.stddev[static_cast<std::size_t>(c)];
    for (int p = 0; p < pixels(); ++p) {
      const int r = p / cols;
      const int j = p % cols;
      g.at(0, c, r, j) = seed_m(p, c) * sd;
      g.at(0, d + c, r, j) = seed_v(p, c) * sd * sd * std::exp(eval.raw.at(0, d + c, r, j));
    }
  }
  const nn::Tensor gin = net_->backward(eval.tape, g, nullptr);
  Matrix dz(pixels(), architecture().in_channels);
  for (int c = 0; c < architecture().in_channels; ++c) {
    const double sd = stats_.input.stddev[static_cast<std::size_t>(c)];
    for (int p = 0; p < pixels(); ++p) dz(p, c) = gin.at(0, c, p / cols, p % cols) / sd;
  }
  return dz;
}

Matrix ConditionalModel::input_gradient(const Matrix& z, const Matrix& seed_m,
                                        const Matrix& seed_v) const {
  return input_gradient(evaluate(z), seed_m, seed_v);
}

void ConditionalModel::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "bmfia-conditional";
  header["format_version"] = kModelFormatVersion;
  header["architecture"] = architecture().to_json();
  header["stats"] = stats_.to_json();
  header["nugget"] = architecture().nugget;
  header["param_count"] = net_->param_count();
  header["buffer_count"] = net_->buffer_count();
  header["layers"] = net_->describe();
  std::vector<double> blob = net_->flat_params();
  const auto buffers = net_->flat_buffers();
  blob.insert(blob.end(), buffers.begin(), buffers.end());
  io::write_container(path, header, blob);
}

ConditionalModel ConditionalModel::load(const std::filesystem::path& path) {
  const auto c = io::read_container(path);
  if (c.header.value("format", std::string()) != "bmfia-conditional") {
    throw MissingArtifact("'" + path.string() + "' is not a conditional model file");
  }
  if (c.header.at("format_version").get<int>() != kModelFormatVersion) {
    throw MissingArtifact("unsupported conditional model format version");
  }
  ConditionalModel model(nn::Architecture::from_json(c.header.at("architecture")), 0);
  model.stats_ = Standardization::from_json(c.header.at("stats"));
  const auto np = model.net_->param_count();
  const auto nb = model.net_->buffer_count();
  if (c.blob.size() != np + nb) throw MissingArtifact("model weight blob has the wrong length");
  model.net_->set_flat_params(std::span<const double>(c.blob.data(), np));
  model.net_->set_flat_buffers(std::span<const double>(c.blob.data() + np, nb));
  return model;
}

// ------------------------------------------------------------- training

double mean_nll(const ConditionalModel& model, const std::vector<TrainingRecord>& records) {
  double total = 0.0;
  double count = 0.0;
  const auto& stats = model.stats();
  const auto& arch = model.architecture();
  for (const auto& r : records) {
    const nn::Tensor in = model.to_input_tensor({&r.z});
    const Matrix ys = stats.standardize_output(r.y);
    const nn::Tensor target = pixels_to_tensor({&ys}, arch);
    nn::Network::Tape tape;
    const nn::Tensor raw = model.network().forward(in, tape, nn::ForwardContext{});
    total += nll_and_grad(raw, target, arch.nugget, 1.0, nullptr, arch.rows, arch.cols);
    count += static_cast<double>(ys.size());
  }
  return total / count;
}

TrainTrace train(ConditionalModel& model, const TrainingSet& data, const TrainConfig& cfg,
                 int epochs) {
  TrainTrace trace;
  if (data.records.empty()) throw InvalidArgument("cannot train on an empty training set");
  data.validate();
  if (data.rows != model.architecture().rows || data.cols != model.architecture().cols) {
    throw ShapeMismatch("training grid does not match the network architecture");
  }
  model.set_stats(data.stats);
  const int rows = data.rows;
  const int cols = data.cols;
  const std::size_t n = data.records.size();

  std::vector<Matrix> zs;
  std::vector<Matrix> ys;
  zs.reserve(n);
  ys.reserve(n);
  for (const auto& r : data.records) {
    zs.push_back(data.stats.standardize_input(r.z));
    ys.push_back(data.stats.standardize_output(r.y));
  }

  nn::Network& net = model.network();
  StochasticOptimizer opt(cfg.optimizer);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size));

  std::vector<double> good_params = net.flat_params();
  std::vector<double> good_buffers = net.flat_buffers();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    double epoch_count = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::vector<const Matrix*> bz;
      std::vector<const Matrix*> by;
      for (std::size_t k = start; k < stop; ++k) {
        bz.push_back(&zs[order[k]]);
        by.push_back(&ys[order[k]]);
      }
      const nn::Tensor in = pixels_to_tensor(bz, model.architecture());
      const nn::Tensor target = pixels_to_tensor(by, model.architecture());
      nn::Network::Tape tape;
      nn::ForwardContext ctx{true, &rng};
      const nn::Tensor raw = net.forward(in, tape, ctx);
      nn::Tensor grad;
      const double count = static_cast<double>(by.size()) * static_cast<double>(ys.front().size());
      const double loss =
          nll_and_grad(raw, target, model.architecture().nugget, 1.0 / count, &grad, rows, cols);
      epoch_loss += loss;
      epoch_count += count;
      if (!std::isfinite(loss)) break;

      auto grads = net.zero_grads();
      net.backward(tape, grad, &grads);
      net.commit(tape);
      std::vector<double> flat_grad;
      flat_grad.reserve(net.param_count());
      for (const auto& g : grads) flat_grad.insert(flat_grad.end(), g.begin(), g.end());
      std::vector<double> params = net.flat_params();
      opt.step(params, flat_grad, false);
      net.set_flat_params(params);
    }
    const double mean_loss = epoch_loss / epoch_count;
    if (!std::isfinite(mean_loss)) {
      net.set_flat_params(good_params);
      net.set_flat_buffers(good_buffers);
      trace.diverged = true;
      break;
    }
    trace.loss.push_back(mean_loss);
    good_params = net.flat_params();
    good_buffers = net.flat_buffers();
  }
  return trace;
}

TrainedConditional train(const TrainingSet& data, const nn::Architecture& arch,
                         const TrainConfig& cfg) {
  TrainedConditional out{ConditionalModel(arch, derive_seed(cfg.seed, 0xC0FFEE)), {}};
  out.trace = train(out.model, data, cfg, cfg.epochs);
  return out;
}

TrainTrace refine(ConditionalModel& model, TrainingSet& data,
                  const std::vector<TrainingRecord>& new_records, const TrainConfig& cfg) {
  if (new_records.empty()) return {};
  for (const auto& r : new_records) data.records.push_back(r);
  data.validate();
  data.recompute_stats();
  TrainConfig refine_cfg = cfg;
  refine_cfg.seed = derive_seed(cfg.seed, data.records.size());
  return train(model, data, refine_cfg, cfg.refine_epochs);
}

}  // namespace bmfia
