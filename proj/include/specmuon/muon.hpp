#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "specmuon/newton_schulz.hpp"
#include "specmuon/optimizer.hpp"

namespace specmuon {

/// Polar direction of a gradient: Newton-Schulz applied to G / ||G||_F.
/// A zero gradient yields a zero direction.
inline Matrix muon_direction(const Matrix& grad, std::size_t ns_iters) {
  grad.check_finite("muon_direction");
  const double n = frobenius_norm(grad);
  if (n == 0.0) return Matrix(grad.rows(), grad.cols());
  return newton_schulz_orthogonalize(grad * (1.0 / n), ns_iters);
}

/// W <- W - lr * polar(G / ||G||_F). Zero gradient is a no-op.
inline ParamBlock muon_step(ParamBlock block, double lr, std::size_t ns_iters = kDefaultNewtonSchulzIters) {
  block.validate();
  block.value.axpy(-lr, muon_direction(block.grad, ns_iters));
  return block;
}

struct MuonConfig {
  double lr = 0.02;
  double momentum = 0.0;
  std::size_t ns_iters = kDefaultNewtonSchulzIters;
};

/// Muon with an optional heavy-ball buffer B <- mu B + G; the polar factor
/// is taken of B. With momentum 0 this is exactly muon_step.
class MuonOptimizer final : public Optimizer {
 public:
  explicit MuonOptimizer(MuonConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr >= 0.0)) throw ArgumentError("muon: lr must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ArgumentError("muon: momentum must lie in [0, 1)");
  }
  std::string name() const override { return "muon"; }

  StepReport step(std::span<ParamBlock> blocks, double, const LossEvaluator&) override {
    if (buffers_.size() != blocks.size()) {
      buffers_.clear();
      for (const auto& b : blocks) buffers_.emplace_back(b.value.rows(), b.value.cols());
    }
    StepReport report;
    report.lr = cfg_.lr;
    double s = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].validate();
      buffers_[i] *= cfg_.momentum;
      buffers_[i] += blocks[i].grad;
      const Matrix dir = muon_direction(buffers_[i], cfg_.ns_iters);
      blocks[i].value.axpy(-cfg_.lr, dir);
      s += cfg_.lr * cfg_.lr * frobenius_inner(dir, dir);
    }
    report.step_fro = std::sqrt(s);
    return report;
  }

 private:
  MuonConfig cfg_;
  std::vector<Matrix> buffers_;
};

}  // namespace specmuon
