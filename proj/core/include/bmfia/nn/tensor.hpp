#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace bmfia::nn {

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
  int size() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

/// Dense NCHW batch of feature maps. Fully connected activations use
/// h = w = 1.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, Shape s) : n(n_), c(s.c), h(s.h), w(s.w), data(static_cast<std::size_t>(n_) * s.size(), 0.0) {}
  Tensor(int n_, int c_, int h_, int w_) : Tensor(n_, Shape{c_, h_, w_}) {}

  Shape shape() const { return {c, h, w}; }
  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  std::size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
  }
  double& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
  double at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

  double* sample(int in) { return data.data() + static_cast<std::size_t>(in) * sample_size(); }
  const double* sample(int in) const { return data.data() + static_cast<std::size_t>(in) * sample_size(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace bmfia::nn
