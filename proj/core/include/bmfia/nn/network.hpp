#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmfia/nn/layers.hpp"
#include "bmfia/nn/tensor.hpp"

namespace bmfia::nn {

/// Convolutional autoencoder with a per-pixel Gaussian output head.
struct Architecture {
  int rows = 0;
  int cols = 0;
  int in_channels = 3;
  /// Output dimension d per pixel; the last layer emits 2d channels.
  int out_dims = 2;
  std::array<int, 3> channels{16, 32, 64};
  int bottleneck = 200;
  double dropout = 0.3;
  PoolKind pooling = PoolKind::max;
  double nugget = 1e-5;
  double bn_momentum = 0.9;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  bool operator==(const Architecture&) const = default;

  /// Grid dimensions rounded up to a multiple of 4 (two pooling stages);
  /// the data occupies the top-left rows x cols block, the rest is zero.
  int padded_rows() const { return (rows + 3) / 4 * 4; }
  int padded_cols() const { return (cols + 3) / 4 * 4; }
};

/// Sequential layer stack. Forward/backward are const and keep all
/// per-call state in a Tape, so one trained network serves many callers.
class Network {
 public:
  struct Tape {
    std::vector<Cache> caches;
  };
  using ParamGrads = std::vector<std::vector<double>>;

  Network(const Architecture& arch, std::uint64_t init_seed);

  const Architecture& architecture() const { return arch_; }
  Shape input_shape() const { return {arch_.in_channels, arch_.padded_rows(), arch_.padded_cols()}; }
  Shape output_shape() const { return {2 * arch_.out_dims, arch_.padded_rows(), arch_.padded_cols()}; }

  Tensor forward(const Tensor& in, Tape& tape, const ForwardContext& ctx) const;
  /// Gradient with respect to the input; parameter gradients go into
  /// `grads` when non-null.
  Tensor backward(const Tape& tape, const Tensor& grad_out, ParamGrads* grads) const;
  /// Fold training-mode normalization statistics into the running buffers.
  void commit(const Tape& tape);

  ParamGrads zero_grads() const;
  std::size_t param_count() const;
  std::size_t buffer_count() const;

  /// Flattened copies in declaration order (layer by layer).
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> values);
  std::vector<double> flat_buffers() const;
  void set_flat_buffers(std::span<const double> values);

  std::vector<std::span<double>> param_blocks();
  nlohmann::json describe() const;

 private:
  Architecture arch_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace bmfia::nn
