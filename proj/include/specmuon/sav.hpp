#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/optimizer.hpp"

namespace specmuon {

/// Scalar auxiliary variable state shared by all blocks of a model.
struct SavScalarState {
  double r = 0.0;
  double kappa = 1.0;
  double psi = 0.95;

  void validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw ArgumentError("SavScalarState: r must be positive and finite");
    if (!(kappa > 0.0)) throw ArgumentError("SavScalarState: kappa must be > 0");
    if (!(psi >= 0.0 && psi < 1.0)) throw ArgumentError("SavScalarState: psi must lie in [0, 1)");
  }
};

/// E = sqrt(f + kappa).
inline double energy_root(double loss, double kappa) {
  const double shifted = loss + kappa;
  if (!(shifted > 0.0)) {
    throw EnergyDomainError("energy root undefined: f + kappa = " + std::to_string(shifted) + " <= 0");
  }
  return std::sqrt(shifted);
}

/// How the constant term of the relaxation quadratic is formed.
///
/// kInequality keeps the predictor gap (r~ - r)^2 that the relaxation
/// inequality carries; kAsPrinted drops it, giving a strictly more
/// conservative (larger) xi. Both choices preserve the dissipation law.
enum class XiCoefficients { kInequality, kAsPrinted };

struct QuadraticCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

/// Coefficients of q(xi) = a xi^2 + b xi + c, where q(xi) <= 0 is the
/// relaxation inequality
///   (xi r~ + (1 - xi) E)^2 - r~^2 - (r~ - r)^2 <= psi D.
inline QuadraticCoefficients relaxation_coefficients(double r_tilde, double r_prev, double e_next, double d,
                                                     double psi,
                                                     XiCoefficients form = XiCoefficients::kInequality) {
  QuadraticCoefficients q;
  const double gap = r_tilde - e_next;
  q.a = gap * gap;
  q.b = 2.0 * e_next * gap;
  q.c = e_next * e_next - r_tilde * r_tilde - psi * d;
  if (form == XiCoefficients::kInequality) q.c -= (r_tilde - r_prev) * (r_tilde - r_prev);
  return q;
}

struct XiSolution {
  double xi = 0.0;
  bool feasible = true;
};

/// Smallest xi in [0, 1] with a xi^2 + b xi + c <= 0 (a >= 0).
///
/// The small root is taken in the cancellation-free form 2c / (-b + sqrt(disc)),
/// which stays accurate as a -> 0. When no xi in [0, 1] qualifies the
/// solution is xi = 0 with feasible = false.
inline XiSolution smallest_feasible_xi(const QuadraticCoefficients& q) {
  if (q.c <= 0.0) return {0.0, true};
  const double disc = q.b * q.b - 4.0 * q.a * q.c;
  if (disc < 0.0 || q.b >= 0.0) return {0.0, false};
  const double xi = 2.0 * q.c / (-q.b + std::sqrt(disc));
  if (!(xi <= 1.0)) return {0.0, false};
  return {std::clamp(xi, 0.0, 1.0), true};
}

inline XiSolution rsav_xi_solution(double r_tilde, double r_prev, double e_next, double d, double psi,
                                   XiCoefficients form = XiCoefficients::kInequality) {
  if (!(psi >= 0.0 && psi < 1.0)) throw ArgumentError("rsav_xi: psi must lie in [0, 1)");
  if (!(d >= 0.0)) throw ArgumentError("rsav_xi: dissipation term must be >= 0");
  if (!(r_tilde > 0.0) || !(e_next > 0.0)) throw ArgumentError("rsav_xi: r_tilde and e_next must be > 0");
  return smallest_feasible_xi(relaxation_coefficients(r_tilde, r_prev, e_next, d, psi, form));
}

/// Relaxation weight xi for r_next = xi r~ + (1 - xi) E(next).
inline double rsav_xi(double r_tilde, double r_prev, double e_next, double d, double psi,
                      XiCoefficients form = XiCoefficients::kInequality) {
  return rsav_xi_solution(r_tilde, r_prev, e_next, d, psi, form).xi;
}

/// Result of one scalar SAV/RSAV step.
struct SavStep {
  ParamBlocks blocks;
  SavScalarState state;
  double r_prev = 0.0;
  double r_tilde = 0.0;
  double dissipation = 0.0;  // D = ||dTheta||_F^2 / h
  double step_fro = 0.0;
  double xi = 1.0;
  bool xi_feasible = true;
  double loss_after = 0.0;  // only set by rsav_step
};

namespace detail {

inline SavStep sav_predict(ParamBlocks blocks, SavScalarState state, double loss, double h) {
  state.validate();
  if (!(h > 0.0)) throw ArgumentError("sav: step h must be > 0");
  for (const auto& b : blocks) b.validate();
  const double e = energy_root(loss, state.kappa);
  const double g2 = squared_grad_norm(blocks);

  SavStep out;
  out.r_prev = state.r;
  out.r_tilde = state.r / (1.0 + 0.5 * h * g2 / (e * e));
  const double coeff = h * out.r_tilde / e;
  double s = 0.0;
  for (auto& b : blocks) {
    b.value.axpy(-coeff, b.grad);
    s += coeff * coeff * frobenius_inner(b.grad, b.grad);
  }
  out.step_fro = std::sqrt(s);
  out.dissipation = s / h;
  out.blocks = std::move(blocks);
  out.state = state;
  return out;
}

}  // namespace detail

/// Explicit SAV step: predictor r~ = r / (1 + (h/2) ||G||^2 / E^2), then
/// Theta <- Theta - h (r~/E) G. The returned state carries r = r~.
inline SavStep sav_step(ParamBlocks blocks, SavScalarState state, double loss, double h) {
  SavStep out = detail::sav_predict(std::move(blocks), state, loss, h);
  out.state.r = out.r_tilde;
  return out;
}

/// Relaxed SAV step. After the SAV update the energy root is re-evaluated at
/// the new point and r is relaxed toward it with the smallest admissible xi.
/// A zero gradient leaves both Theta and the state untouched.
inline SavStep rsav_step(ParamBlocks blocks, SavScalarState state, const LossEvaluator& loss_fn, double h,
                         double loss, XiCoefficients form = XiCoefficients::kInequality) {
  if (squared_grad_norm(blocks) == 0.0) {
    state.validate();
    SavStep out;
    out.blocks = std::move(blocks);
    out.state = state;
    out.r_prev = out.r_tilde = state.r;
    out.loss_after = loss;
    return out;
  }
  SavStep out = detail::sav_predict(std::move(blocks), state, loss, h);
  out.loss_after = evaluate_checked(loss_fn, out.blocks);
  const double e_next = energy_root(out.loss_after, state.kappa);
  const XiSolution sol = rsav_xi_solution(out.r_tilde, out.r_prev, e_next, out.dissipation, state.psi, form);
  out.xi = sol.xi;
  out.xi_feasible = sol.feasible;
  out.state.r = sol.xi * out.r_tilde + (1.0 - sol.xi) * e_next;
  return out;
}

/// rsav_step with the current loss obtained from the evaluator.
inline SavStep rsav_step(ParamBlocks blocks, SavScalarState state, const LossEvaluator& loss_fn, double h) {
  const double loss = evaluate_checked(loss_fn, blocks);
  return rsav_step(std::move(blocks), state, loss_fn, h, loss);
}

struct SavConfig {
  double lr = 0.1;  // h
  double kappa = 1.0;
  double psi = 0.95;
  bool relax = true;
  XiCoefficients xi_form = XiCoefficients::kInequality;
};

/// SAV (relax = false) or RSAV (relax = true) over all blocks with one scalar r,
/// initialized to E(Theta^0) on the first step.
class SavOptimizer final : public Optimizer {
 public:
  explicit SavOptimizer(SavConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ArgumentError("sav: lr must be > 0");
    if (!(cfg.kappa > 0.0)) throw ArgumentError("sav: kappa must be > 0");
    if (!(cfg.psi >= 0.0 && cfg.psi < 1.0)) throw ArgumentError("sav: psi must lie in [0, 1)");
  }
  std::string name() const override { return cfg_.relax ? "rsav" : "sav"; }
  std::size_t evaluations_per_step() const override { return cfg_.relax ? 2 : 1; }
  const SavScalarState& state() const noexcept { return state_; }

  StepReport step(std::span<ParamBlock> blocks, double loss, const LossEvaluator& evaluate) override {
    if (!initialized_) {
      state_ = SavScalarState{energy_root(loss, cfg_.kappa), cfg_.kappa, cfg_.psi};
      initialized_ = true;
    }
    ParamBlocks work(blocks.begin(), blocks.end());
    SavStep s = cfg_.relax ? rsav_step(std::move(work), state_, evaluate, cfg_.lr, loss, cfg_.xi_form)
                           : sav_step(std::move(work), state_, loss, cfg_.lr);
    std::move(s.blocks.begin(), s.blocks.end(), blocks.begin());

    StepReport report;
    report.guarantee = cfg_.relax ? Guarantee::kScalarRelaxed : Guarantee::kScalarPredictor;
    report.lr = cfg_.lr;
    report.psi = cfg_.psi;
    report.step_fro = s.step_fro;
    report.r_prev = {s.r_prev};
    report.r_tilde = {s.r_tilde};
    report.r_next = {s.state.r};
    report.d_terms = {s.dissipation};
    if (cfg_.relax) {
      report.xi = {s.xi};
      report.xi_infeasible = s.xi_feasible ? 0 : 1;
      report.loss_after = s.loss_after;
    }
    state_ = s.state;
    return report;
  }

 private:
  SavConfig cfg_;
  SavScalarState state_;
  bool initialized_ = false;
};

}  // namespace specmuon
