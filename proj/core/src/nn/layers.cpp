#include "bmfia/nn/layers.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "bmfia/error.hpp"

namespace bmfia::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_channels(const Tensor& in, int expected, const char* who) {
  if (in.c != expected) {
    throw ShapeMismatch(std::string(who) + ": expected " + std::to_string(expected) +
                        " channels, got " + std::to_string(in.c));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, Rng& init_rng, double init_scale)
    : in_(in_channels), out_(out_channels) {
  p_.assign(static_cast<std::size_t>(out_) * in_ * 9 + out_, 0.0);
  // He-uniform for ELU networks.
  const double bound = init_scale * std::sqrt(6.0 / (in_ * 9.0));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < static_cast<std::size_t>(out_) * in_ * 9; ++i) p_[i] = dist(init_rng);
}

nlohmann::json Conv2d::describe() const {
  return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"kernel", 3}};
}

void Conv2d::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  check_channels(in, in_, "conv2d");
  const int h = in.h;
  const int w = in.w;
  out = Tensor(in.n, out_, h, w);
  const double* weights = p_.data();
  const double* bias = p_.data() + static_cast<std::size_t>(out_) * in_ * 9;
  for (int n = 0; n < in.n; ++n) {
    for (int oc = 0; oc < out_; ++oc) {
      double* o = out.sample(n) + static_cast<std::size_t>(oc) * h * w;
      std::fill(o, o + static_cast<std::size_t>(h) * w, bias[oc]);
      for (int ic = 0; ic < in_; ++ic) {
        const double* src = in.sample(n) + static_cast<std::size_t>(ic) * h * w;
        const double* k = weights + (static_cast<std::size_t>(oc) * in_ + ic) * 9;
        for (int kh = 0; kh < 3; ++kh) {
          const int dy = kh - 1;
          const int y0 = std::max(0, -dy);
          const int y1 = std::min(h, h - dy);
          for (int kw = 0; kw < 3; ++kw) {
            const int dx = kw - 1;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w, w - dx);
            const double kv = k[kh * 3 + kw];
            for (int y = y0; y < y1; ++y) {
              double* orow = o + static_cast<std::size_t>(y) * w;
              const double* irow = src + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) orow[x] += kv * irow[x];
            }
          }
        }
      }
    }
  }
  cache.input = in;
}

void Conv2d::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                      std::span<double> param_grad) const {
  const Tensor& in = cache.input;
  const int h = in.h;
  const int w = in.w;
  grad_in = Tensor(in.n, in_, h, w);
  const bool want_params = !param_grad.empty();
  const double* weights = p_.data();
  double* gw = want_params ? param_grad.data() : nullptr;
  double* gb = want_params ? param_grad.data() + static_cast<std::size_t>(out_) * in_ * 9 : nullptr;

  for (int n = 0; n < in.n; ++n) {
    for (int oc = 0; oc < out_; ++oc) {
      const double* go = grad_out.sample(n) + static_cast<std::size_t>(oc) * h * w;
      if (want_params) {
        double s = 0.0;
        for (int i = 0; i < h * w; ++i) s += go[i];
        gb[oc] += s;
      }
      for (int ic = 0; ic < in_; ++ic) {
        const double* src = in.sample(n) + static_cast<std::size_t>(ic) * h * w;
        double* gi = grad_in.sample(n) + static_cast<std::size_t>(ic) * h * w;
        const std::size_t kbase = (static_cast<std::size_t>(oc) * in_ + ic) * 9;
        for (int kh = 0; kh < 3; ++kh) {
          const int dy = kh - 1;
          const int y0 = std::max(0, -dy);
          const int y1 = std::min(h, h - dy);
          for (int kw = 0; kw < 3; ++kw) {
            const int dx = kw - 1;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w, w - dx);
            const double kv = weights[kbase + kh * 3 + kw];
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
              const double* grow = go + static_cast<std::size_t>(y) * w;
              const double* irow = src + static_cast<std::size_t>(y + dy) * w + dx;
              double* girow = gi + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) {
                girow[x] += kv * grow[x];
                acc += grow[x] * irow[x];
              }
            }
            if (want_params) gw[kbase + kh * 3 + kw] += acc;
          }
        }
      }
    }
  }
}

// ----------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features, Rng& init_rng) : in_(in_features), out_(out_features) {
  p_.assign(static_cast<std::size_t>(out_) * in_ + out_, 0.0);
  const double bound = std::sqrt(6.0 / in_);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < static_cast<std::size_t>(out_) * in_; ++i) p_[i] = dist(init_rng);
}

nlohmann::json Dense::describe() const { return {{"kind", kind()}, {"in", in_}, {"out", out_}}; }

void Dense::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  if (static_cast<int>(in.sample_size()) != in_) {
    throw ShapeMismatch("dense: expected " + std::to_string(in_) + " features, got " +
                        std::to_string(in.sample_size()));
  }
  out = Tensor(in.n, out_, 1, 1);
  ConstMapMat x(in.data.data(), in.n, in_);
  ConstMapMat wmat(p_.data(), out_, in_);
  Eigen::Map<const Eigen::RowVectorXd> b(p_.data() + static_cast<std::size_t>(out_) * in_, out_);
  MapMat y(out.data.data(), in.n, out_);
  y.noalias() = x * wmat.transpose();
  y.rowwise() += b;
  cache.input = in;
}

void Dense::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                     std::span<double> param_grad) const {
  const Tensor& in = cache.input;
  grad_in = Tensor(in.n, in.shape());
  ConstMapMat g(grad_out.data.data(), in.n, out_);
  ConstMapMat wmat(p_.data(), out_, in_);
  MapMat gi(grad_in.data.data(), in.n, in_);
  gi.noalias() = g * wmat;
  if (!param_grad.empty()) {
    ConstMapMat x(in.data.data(), in.n, in_);
    MapMat gw(param_grad.data(), out_, in_);
    gw.noalias() += g.transpose() * x;
    Eigen::Map<Eigen::RowVectorXd> gb(param_grad.data() + static_cast<std::size_t>(out_) * in_, out_);
    gb += g.colwise().sum();
  }
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, double momentum, double eps)
    : ch_(channels), momentum_(momentum), eps_(eps) {
  p_.assign(static_cast<std::size_t>(2 * ch_), 0.0);
  std::fill(p_.begin(), p_.begin() + ch_, 1.0);
  running_.assign(static_cast<std::size_t>(2 * ch_), 0.0);
  std::fill(running_.begin() + ch_, running_.end(), 1.0);
}

nlohmann::json BatchNorm::describe() const {
  return {{"kind", kind()}, {"channels", ch_}, {"momentum", momentum_}, {"eps", eps_}};
}

void BatchNorm::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const {
  check_channels(in, ch_, "batchnorm");
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  const double m = static_cast<double>(in.n) * static_cast<double>(plane);
  out = Tensor(in.n, in.shape());
  // aux layout: mean [ch], invstd [ch], batch var [ch], then xhat.
  cache.aux.assign(3 * static_cast<std::size_t>(ch_) + in.size(), 0.0);
  double* xhat = cache.aux.data() + 3 * ch_;
  for (int c = 0; c < ch_; ++c) {
    double mean;
    double var;
    if (ctx.training) {
      double s = 0.0;
      for (int n = 0; n < in.n; ++n) {
        const double* src = in.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) s += src[i];
      }
      mean = s / m;
      double v = 0.0;
      for (int n = 0; n < in.n; ++n) {
        const double* src = in.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (src[i] - mean) * (src[i] - mean);
      }
      var = v / m;
    } else {
      mean = running_[static_cast<std::size_t>(c)];
      var = running_[static_cast<std::size_t>(ch_ + c)];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cache.aux[static_cast<std::size_t>(c)] = mean;
    cache.aux[static_cast<std::size_t>(ch_ + c)] = invstd;
    cache.aux[static_cast<std::size_t>(2 * ch_ + c)] = var;
    const double gamma = p_[static_cast<std::size_t>(c)];
    const double beta = p_[static_cast<std::size_t>(ch_ + c)];
    for (int n = 0; n < in.n; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * in.sample_size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (in.data[off + i] - mean) * invstd;
        xhat[off + i] = xh;
        out.data[off + i] = gamma * xh + beta;
      }
    }
  }
  cache.input = Tensor(in.n, in.shape());  // shape only; xhat lives in aux
  cache.idx.assign(1, ctx.training ? 1u : 0u);
}

void BatchNorm::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                         std::span<double> param_grad) const {
  const Tensor& shape_ref = cache.input;
  const bool training = !cache.idx.empty() && cache.idx[0] == 1u;
  const std::size_t plane = static_cast<std::size_t>(shape_ref.h) * shape_ref.w;
  const double m = static_cast<double>(shape_ref.n) * static_cast<double>(plane);
  grad_in = Tensor(shape_ref.n, shape_ref.shape());
  const double* xhat = cache.aux.data() + 3 * ch_;
  for (int c = 0; c < ch_; ++c) {
    const double invstd = cache.aux[static_cast<std::size_t>(ch_ + c)];
    const double gamma = p_[static_cast<std::size_t>(c)];
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < shape_ref.n; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * shape_ref.sample_size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out.data[off + i];
        sum_gx += grad_out.data[off + i] * xhat[off + i];
      }
    }
    if (!param_grad.empty()) {
      param_grad[static_cast<std::size_t>(c)] += sum_gx;
      param_grad[static_cast<std::size_t>(ch_ + c)] += sum_g;
    }
    for (int n = 0; n < shape_ref.n; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * shape_ref.sample_size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double g = grad_out.data[off + i];
        if (training) {
          grad_in.data[off + i] = gamma * invstd * (g - sum_g / m - xhat[off + i] * sum_gx / m);
        } else {
          grad_in.data[off + i] = gamma * invstd * g;
        }
      }
    }
  }
}

void BatchNorm::commit(const Cache& cache) {
  if (cache.idx.empty() || cache.idx[0] != 1u) return;
  const Tensor& shape_ref = cache.input;
  const double m = static_cast<double>(shape_ref.n) * shape_ref.h * shape_ref.w;
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (int c = 0; c < ch_; ++c) {
    auto& rm = running_[static_cast<std::size_t>(c)];
    auto& rv = running_[static_cast<std::size_t>(ch_ + c)];
    rm = momentum_ * rm + (1.0 - momentum_) * cache.aux[static_cast<std::size_t>(c)];
    rv = momentum_ * rv + (1.0 - momentum_) * cache.aux[static_cast<std::size_t>(2 * ch_ + c)] * unbias;
  }
}

// ------------------------------------------------------------------- ELU

void Elu::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  out = Tensor(in.n, in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in.data[i];
    out.data[i] = v > 0.0 ? v : std::expm1(v);
  }
  cache.output = out;
}

void Elu::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                   std::span<double>) const {
  const Tensor& y = cache.output;
  grad_in = Tensor(y.n, y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    grad_in.data[i] = grad_out.data[i] * (y.data[i] > 0.0 ? 1.0 : y.data[i] + 1.0);
  }
}

// --------------------------------------------------------------- Pooling

void Pool2::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw ShapeMismatch("2x2 pooling needs even spatial dimensions, got " + std::to_string(in.h) +
                        "x" + std::to_string(in.w));
  }
  const int oh = in.h / 2;
  const int ow = in.w / 2;
  out = Tensor(in.n, in.c, oh, ow);
  if (kind_ == PoolKind::max) cache.idx.assign(out.size(), 0);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          const std::size_t o = out.index(n, c, y, x);
          if (kind_ == PoolKind::max) {
            std::size_t best = in.index(n, c, 2 * y, 2 * x);
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t j = in.index(n, c, 2 * y + dy, 2 * x + dx);
                if (in.data[j] > in.data[best]) best = j;
              }
            }
            out.data[o] = in.data[best];
            cache.idx[o] = best;
          } else {
            double s = 0.0;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) s += in.at(n, c, 2 * y + dy, 2 * x + dx);
            }
            out.data[o] = 0.25 * s;
          }
        }
      }
    }
  }
  cache.input = Tensor(in.n, in.shape());
}

void Pool2::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                     std::span<double>) const {
  const Tensor& shape_ref = cache.input;
  grad_in = Tensor(shape_ref.n, shape_ref.shape());
  if (kind_ == PoolKind::max) {
    for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in.data[cache.idx[o]] += grad_out.data[o];
    return;
  }
  for (int n = 0; n < grad_out.n; ++n) {
    for (int c = 0; c < grad_out.c; ++c) {
      for (int y = 0; y < grad_out.h; ++y) {
        for (int x = 0; x < grad_out.w; ++x) {
          const double g = 0.25 * grad_out.at(n, c, y, x);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) grad_in.at(n, c, 2 * y + dy, 2 * x + dx) += g;
          }
        }
      }
    }
  }
}

// -------------------------------------------------------------- Upsample

void Upsample2::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  out = Tensor(in.n, in.c, in.h * 2, in.w * 2);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) out.at(n, c, y, x) = in.at(n, c, y / 2, x / 2);
      }
    }
  }
  cache.input = Tensor(in.n, in.shape());
}

void Upsample2::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                         std::span<double>) const {
  const Tensor& shape_ref = cache.input;
  grad_in = Tensor(shape_ref.n, shape_ref.shape());
  for (int n = 0; n < grad_out.n; ++n) {
    for (int c = 0; c < grad_out.c; ++c) {
      for (int y = 0; y < grad_out.h; ++y) {
        for (int x = 0; x < grad_out.w; ++x) grad_in.at(n, c, y / 2, x / 2) += grad_out.at(n, c, y, x);
      }
    }
  }
}

// --------------------------------------------------------------- Reshape

void Reshape::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext&) const {
  if (static_cast<int>(in.sample_size()) != target_.size()) {
    throw ShapeMismatch("reshape: element count mismatch");
  }
  out = in;
  out.c = target_.c;
  out.h = target_.h;
  out.w = target_.w;
  cache.input = Tensor(in.n, in.shape());
}

void Reshape::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                       std::span<double>) const {
  grad_in = grad_out;
  grad_in.c = cache.input.c;
  grad_in.h = cache.input.h;
  grad_in.w = cache.input.w;
}

// --------------------------------------------------------------- Dropout

void Dropout::forward(const Tensor& in, Tensor& out, Cache& cache, const ForwardContext& ctx) const {
  out = in;
  cache.aux.clear();
  if (!ctx.training || rate_ <= 0.0) return;
  if (ctx.rng == nullptr) throw InvalidArgument("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  cache.aux.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    cache.aux[i] = keep(*ctx.rng) ? scale : 0.0;
    out.data[i] *= cache.aux[i];
  }
}

void Dropout::backward(const Tensor& grad_out, Tensor& grad_in, const Cache& cache,
                       std::span<double>) const {
  grad_in = grad_out;
  if (cache.aux.empty()) return;
  for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in.data[i] *= cache.aux[i];
}

}  // namespace bmfia::nn
