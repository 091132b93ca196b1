#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/optimizer.hpp"

namespace specmuon {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; AdamW only

  void validate() const {
    if (!(lr >= 0.0)) throw ArgumentError("adam: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ArgumentError("adam: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ArgumentError("adam: eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ArgumentError("adam: weight_decay must be >= 0");
  }
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::size_t t = 0;
};

inline ParamBlock gd_step(ParamBlock block, double lr) {
  block.validate();
  block.value.axpy(-lr, block.grad);
  return block;
}

namespace detail {

inline std::pair<ParamBlock, AdamState> adam_update(ParamBlock block, AdamState state, const AdamConfig& cfg,
                                                    bool decoupled_decay) {
  cfg.validate();
  block.validate();
  if (state.m.empty()) {
    state.m = Matrix(block.value.rows(), block.value.cols());
    state.v = Matrix(block.value.rows(), block.value.cols());
  }
  if (!state.m.same_shape(block.value)) throw DimensionError("adam: state shape does not match block");
  if (decoupled_decay && cfg.weight_decay != 0.0) block.value *= 1.0 - cfg.lr * cfg.weight_decay;

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto w = block.value.data();
  const auto g = block.grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
  return {std::move(block), std::move(state)};
}

}  // namespace detail

/// Adam with bias correction; weight_decay is ignored.
inline std::pair<ParamBlock, AdamState> adam_step(ParamBlock block, AdamState state, const AdamConfig& cfg) {
  return detail::adam_update(std::move(block), std::move(state), cfg, false);
}

/// AdamW: W <- (1 - lr*lambda) W before the Adam update.
inline std::pair<ParamBlock, AdamState> adamw_step(ParamBlock block, AdamState state, const AdamConfig& cfg) {
  return detail::adam_update(std::move(block), std::move(state), cfg, true);
}

class GdOptimizer final : public Optimizer {
 public:
  explicit GdOptimizer(double lr) : lr_(lr) {
    if (!(lr >= 0.0)) throw ArgumentError("gd: lr must be >= 0");
  }
  std::string name() const override { return "gd"; }

  StepReport step(std::span<ParamBlock> blocks, double, const LossEvaluator&) override {
    StepReport report;
    report.lr = lr_;
    double s = 0.0;
    for (auto& b : blocks) {
      b = gd_step(std::move(b), lr_);
      s += lr_ * lr_ * frobenius_inner(b.grad, b.grad);
    }
    report.step_fro = std::sqrt(s);
    return report;
  }

 private:
  double lr_;
};

class AdamOptimizer final : public Optimizer {
 public:
  AdamOptimizer(AdamConfig cfg, bool decoupled) : cfg_(cfg), decoupled_(decoupled) { cfg_.validate(); }
  std::string name() const override { return decoupled_ ? "adamw" : "adam"; }

  StepReport step(std::span<ParamBlock> blocks, double, const LossEvaluator&) override {
    if (states_.size() != blocks.size()) states_.assign(blocks.size(), AdamState{});
    StepReport report;
    report.lr = cfg_.lr;
    double s = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Matrix before = blocks[i].value;
      auto [b, st] = detail::adam_update(std::move(blocks[i]), std::move(states_[i]), cfg_, decoupled_);
      blocks[i] = std::move(b);
      states_[i] = std::move(st);
      const Matrix diff = blocks[i].value - before;
      s += frobenius_inner(diff, diff);
    }
    report.step_fro = std::sqrt(s);
    return report;
  }

 private:
  AdamConfig cfg_;
  bool decoupled_;
  std::vector<AdamState> states_;
};

}  // namespace specmuon
