#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmfia/nn/tensor.hpp"
#include "bmfia/types.hpp"

namespace bmfia::nn {

struct ForwardContext {
  bool training = false;
  /// Needed only for dropout in training mode.
  Rng* rng = nullptr;
};

/// Per-call intermediate values kept for the backward pass. Owned by the
/// caller so that a trained network can be evaluated concurrently.
struct Cache {
  Tensor input;
  Tensor output;
  std::vector<double> aux;
  std::vector<std::size_t> idx;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;

  virtual void forward(const Tensor& in, Tensor& out, Cache& cache,
                       const ForwardContext& ctx) const = 0;
  /// Backpropagate `grad_out`. Parameter gradients are accumulated into
  /// `param_grad` when it is non-empty.
  virtual void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                        std::span<double> param_grad) const = 0;

  /// Trainable parameters.
  virtual std::span<double> params() { return {}; }
  virtual std::span<const double> params() const { return {}; }
  /// Non-trainable state saved with the model (normalization running stats).
  virtual std::span<double> buffers() { return {}; }
  virtual std::span<const double> buffers() const { return {}; }
  /// Fold training-mode batch statistics from `cache` into the buffers.
  virtual void commit(const Cache&) {}

  virtual nlohmann::json describe() const { return {{"kind", kind()}}; }
};

/// 3x3 convolution with zero "same" padding.
class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, Rng& init_rng, double init_scale = 1.0);

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override { return {out_, in.h, in.w}; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  nlohmann::json describe() const override;

 private:
  int in_;
  int out_;
  std::vector<double> p_;  // weights [out][in][3][3] then bias [out]
};

class Dense final : public Layer {
 public:
  Dense(int in_features, int out_features, Rng& init_rng);

  std::string kind() const override { return "dense"; }
  Shape output_shape(const Shape&) const override { return {out_, 1, 1}; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  nlohmann::json describe() const override;

 private:
  int in_;
  int out_;
  std::vector<double> p_;  // weights [out][in] then bias [out]
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics; inference mode uses running averages.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(int channels, double momentum = 0.9, double eps = 1e-5);

  std::string kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape& in) const override { return in; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  std::span<double> buffers() override { return running_; }
  std::span<const double> buffers() const override { return running_; }
  void commit(const Cache& cache) override;
  nlohmann::json describe() const override;

 private:
  int ch_;
  double momentum_;
  double eps_;
  std::vector<double> p_;        // gamma [ch] then beta [ch]
  std::vector<double> running_;  // mean [ch] then var [ch]
};

class Elu final : public Layer {
 public:
  std::string kind() const override { return "elu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
};

enum class PoolKind { max, average };

/// 2x2 pooling with stride 2; spatial dims must be even.
class Pool2 final : public Layer {
 public:
  explicit Pool2(PoolKind kind) : kind_(kind) {}

  std::string kind() const override { return kind_ == PoolKind::max ? "maxpool2" : "avgpool2"; }
  Shape output_shape(const Shape& in) const override { return {in.c, in.h / 2, in.w / 2}; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;

 private:
  PoolKind kind_;
};

/// Nearest-neighbour 2x upsampling.
class Upsample2 final : public Layer {
 public:
  std::string kind() const override { return "upsample2"; }
  Shape output_shape(const Shape& in) const override { return {in.c, in.h * 2, in.w * 2}; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
};

/// Reinterpret the per-sample buffer with a new shape of equal size.
class Reshape final : public Layer {
 public:
  explicit Reshape(Shape target) : target_(target) {}

  std::string kind() const override { return "reshape"; }
  Shape output_shape(const Shape&) const override { return target_; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;

 private:
  Shape target_;
};

/// Inverted dropout: active only in training mode.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  std::string kind() const override { return "dropout"; }
  Shape output_shape(const Shape& in) const override { return in; }
  void forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const override;
  void backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                std::span<double> param_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}, {"rate", rate_}}; }

 private:
  double rate_;
};

}  // namespace bmfia::nn
