#pragma once

#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/matrix.hpp"

namespace specmuon {

/// One named matrix parameter W together with its gradient G.
struct ParamBlock {
  std::string name;
  Matrix value;
  Matrix grad;

  void validate() const {
    if (!value.same_shape(grad)) throw DimensionError("ParamBlock '" + name + "': value and grad shapes differ");
    value.check_finite(("ParamBlock '" + name + "' value").c_str());
    grad.check_finite(("ParamBlock '" + name + "' grad").c_str());
  }
};

using ParamBlocks = std::vector<ParamBlock>;

/// Loss at the blocks' current values.
using LossEvaluator = std::function<double(std::span<const ParamBlock>)>;

inline double squared_grad_norm(std::span<const ParamBlock> blocks) {
  double s = 0.0;
  for (const auto& b : blocks) s += frobenius_inner(b.grad, b.grad);
  return s;
}

/// Runs the evaluator, mapping foreign exceptions and non-finite results to
/// EvaluationError.
inline double evaluate_checked(const LossEvaluator& evaluate, std::span<const ParamBlock> blocks) {
  if (!evaluate) throw EvaluationError("no loss evaluator supplied");
  double value = 0.0;
  try {
    value = evaluate(blocks);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw EvaluationError(std::string("loss evaluation failed: ") + e.what());
  }
  if (!std::isfinite(value)) throw EvaluationError("loss evaluation returned a non-finite value");
  return value;
}

/// Which discrete guarantee a step claims, so the diagnostics layer knows
/// what to check.
enum class Guarantee {
  kNone,
  kModeDissipation,  // mode-wise relaxed energy law (theory-mode SpecMuon)
  kScalarRelaxed,    // scalar RSAV full dissipation
  kScalarPredictor,  // plain SAV predictor dissipation
};

/// Per-mode quantities of a theory-mode SpecMuon step that enter the descent
/// condition and the rate alignment factor.
struct RetainedMode {
  std::size_t block = 0;
  double sigma = 0.0;
  double r_tilde = 0.0;
  double energy = 0.0;  // E^k
};

/// Diagnostics emitted by every optimizer step.
struct StepReport {
  Guarantee guarantee = Guarantee::kNone;
  double step_fro = 0.0;
  // Auxiliary variables before and after the step, flattened across blocks.
  // For the scalar schemes these hold one entry.
  std::vector<double> r_prev;
  std::vector<double> r_next;
  // Dissipation terms aligned with r_prev/r_next (D_i, or the scalar D).
  std::vector<double> d_terms;
  // Predictor values aligned with r_prev (scalar SAV checks r_tilde).
  std::vector<double> r_tilde;
  double psi = 0.0;
  double lr = 0.0;
  std::vector<double> xi;
  std::size_t xi_infeasible = 0;
  std::vector<RetainedMode> modes;
  bool stalled = false;
  std::optional<double> loss_after;

  bool has_energy() const noexcept { return !r_next.empty(); }

  static double sum_squares(const std::vector<double>& r) {
    double s = 0.0;
    for (double x : r) s += x * x;
    return s;
  }
  double energy_before() const { return sum_squares(r_prev); }
  double energy_after() const { return sum_squares(r_next); }
  double d_sum() const {
    double s = 0.0;
    for (double d : d_terms) s += d;
    return s;
  }
};

inline double blocks_step_norm(std::span<const ParamBlock> before, std::span<const ParamBlock> after) {
  double s = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto x = before[i].value.data();
    const auto y = after[i].value.data();
    for (std::size_t j = 0; j < x.size(); ++j) s += (y[j] - x[j]) * (y[j] - x[j]);
  }
  return std::sqrt(s);
}

/// Stateful optimizer over a fixed list of blocks. The caller fills each
/// block's grad at the current value and passes f at that point; optimizers
/// that relax against the new energy call `evaluate` once more.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  virtual StepReport step(std::span<ParamBlock> blocks, double loss, const LossEvaluator& evaluate) = 0;
  virtual std::size_t evaluations_per_step() const { return 1; }
};

}  // namespace specmuon
