#include "bmfia/nn/network.hpp"

#include "bmfia/error.hpp"

namespace bmfia::nn {

nlohmann::json Architecture::to_json() const {
  return {{"rows", rows},
          {"cols", cols},
          {"in_channels", in_channels},
          {"out_dims", out_dims},
          {"channels", channels},
          {"bottleneck", bottleneck},
          {"dropout", dropout},
          {"pooling", pooling == PoolKind::max ? "max" : "average"},
          {"nugget", nugget},
          {"bn_momentum", bn_momentum}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.rows = j.at("rows").get<int>();
  a.cols = j.at("cols").get<int>();
  a.in_channels = j.value("in_channels", 3);
  a.out_dims = j.value("out_dims", 2);
  a.channels = j.at("channels").get<std::array<int, 3>>();
  a.bottleneck = j.at("bottleneck").get<int>();
  a.dropout = j.value("dropout", 0.3);
  const std::string pool = j.value("pooling", std::string("max"));
  if (pool == "max") {
    a.pooling = PoolKind::max;
  } else if (pool == "average") {
    a.pooling = PoolKind::average;
  } else {
    throw InvalidArgument("unknown pooling kind '" + pool + "'");
  }
  a.nugget = j.value("nugget", 1e-5);
  a.bn_momentum = j.value("bn_momentum", 0.9);
  return a;
}

Network::Network(const Architecture& arch, std::uint64_t init_seed) : arch_(arch) {
  if (arch.rows <= 0 || arch.cols <= 0) {
    throw ShapeMismatch("network grid dimensions must be positive, got " +
                        std::to_string(arch.rows) + "x" + std::to_string(arch.cols));
  }
  Rng rng(init_seed);
  const auto [c1, c2, c3] = arch.channels;
  const int h4 = arch.padded_rows() / 4;
  const int w4 = arch.padded_cols() / 4;
  const int flat = c3 * h4 * w4;
  const double mom = arch.bn_momentum;

  auto add = [&](std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); };
  auto conv_block = [&](int in, int out) {
    add(std::make_unique<Conv2d>(in, out, rng));
    add(std::make_unique<BatchNorm>(out, mom));
    add(std::make_unique<Elu>());
  };

  // Encoder.
  conv_block(arch.in_channels, c1);
  add(std::make_unique<Pool2>(arch.pooling));
  conv_block(c1, c2);
  add(std::make_unique<Pool2>(arch.pooling));
  conv_block(c2, c3);
  add(std::make_unique<Reshape>(Shape{flat, 1, 1}));
  add(std::make_unique<Dense>(flat, arch.bottleneck, rng));
  add(std::make_unique<BatchNorm>(arch.bottleneck, mom));
  add(std::make_unique<Elu>());
  add(std::make_unique<Dropout>(arch.dropout));

  // Decoder mirrors the encoder.
  add(std::make_unique<Dense>(arch.bottleneck, flat, rng));
  add(std::make_unique<BatchNorm>(flat, mom));
  add(std::make_unique<Elu>());
  add(std::make_unique<Dropout>(arch.dropout));
  add(std::make_unique<Reshape>(Shape{c3, h4, w4}));
  conv_block(c3, c2);
  add(std::make_unique<Upsample2>());
  conv_block(c2, c1);
  add(std::make_unique<Upsample2>());

  // Probabilistic output layer: d mean channels, d raw log-variance channels.
  add(std::make_unique<Conv2d>(c1, 2 * arch.out_dims, rng, 0.1));
}

Tensor Network::forward(const Tensor& in, Tape& tape, const ForwardContext& ctx) const {
  if (in.shape() != input_shape()) throw ShapeMismatch("network input shape mismatch");
  tape.caches.assign(layers_.size(), Cache{});
  Tensor cur = in;
  Tensor next;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->forward(cur, next, tape.caches[i], ctx);
    std::swap(cur, next);
  }
  return cur;
}

Tensor Network::backward(const Tape& tape, const Tensor& grad_out, ParamGrads* grads) const {
  if (tape.caches.size() != layers_.size()) throw InvalidArgument("tape does not match network");
  Tensor cur = grad_out;
  Tensor next;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::span<double> pg;
    if (grads != nullptr) pg = (*grads)[i];
    layers_[i]->backward(cur, next, tape.caches[i], pg);
    std::swap(cur, next);
  }
  return cur;
}

void Network::commit(const Tape& tape) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit(tape.caches[i]);
}

Network::ParamGrads Network::zero_grads() const {
  ParamGrads g;
  g.reserve(layers_.size());
  for (const auto& layer : layers_) {
    const Layer& l = *layer;
    g.emplace_back(l.params().size(), 0.0);
  }
  return g;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<const Layer&>(*layer).params().size();
  return n;
}

std::size_t Network::buffer_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<const Layer&>(*layer).buffers().size();
  return n;
}

std::vector<double> Network::flat_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& layer : layers_) {
    const auto p = static_cast<const Layer&>(*layer).params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void Network::set_flat_params(std::span<const double> values) {
  if (values.size() != param_count()) throw ShapeMismatch("parameter count mismatch");
  std::size_t off = 0;
  for (auto& layer : layers_) {
    auto p = layer->params();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + p.size()), p.begin());
    off += p.size();
  }
}

std::vector<double> Network::flat_buffers() const {
  std::vector<double> out;
  out.reserve(buffer_count());
  for (const auto& layer : layers_) {
    const auto b = static_cast<const Layer&>(*layer).buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void Network::set_flat_buffers(std::span<const double> values) {
  if (values.size() != buffer_count()) throw ShapeMismatch("buffer count mismatch");
  std::size_t off = 0;
  for (auto& layer : layers_) {
    auto b = layer->buffers();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + b.size()), b.begin());
    off += b.size();
  }
}

std::vector<std::span<double>> Network::param_blocks() {
  std::vector<std::span<double>> blocks;
  blocks.reserve(layers_.size());
  for (auto& layer : layers_) blocks.push_back(layer->params());
  return blocks;
}

nlohmann::json Network::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) layers.push_back(layer->describe());
  return layers;
}

}  // namespace bmfia::nn
