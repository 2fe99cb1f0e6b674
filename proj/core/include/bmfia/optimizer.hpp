#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bmfia/error.hpp"

namespace bmfia {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + name + "'");
}

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order stochastic optimizer over a flat parameter vector. `ascent`
/// selects maximization (ELBO) versus minimization (training loss).
class StochasticOptimizer {
 public:
  StochasticOptimizer() = default;
  explicit StochasticOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void step(std::span<double> params, std::span<const double> grad, bool ascent) {
    if (params.size() != grad.size()) throw ShapeMismatch("optimizer: gradient size mismatch");
    const double sign = ascent ? 1.0 : -1.0;
    ++t_;
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] += sign * cfg_.learning_rate * grad[i];
      return;
    }
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] += sign * cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace bmfia
