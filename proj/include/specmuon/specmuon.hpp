#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/optimizer.hpp"
#include "specmuon/sav.hpp"
#include "specmuon/svd.hpp"

namespace specmuon {

// SpecMuon: SAV-style energy control applied independently to the leading
// singular modes Q_i = u_i v_i^T of each gradient block.
//
// Theory mode is the unnormalized, momentum-free mode-wise RSAV update whose
// dissipation, positivity, descent and rate properties are checked by the
// diagnostics layer:
//   h_i = lr / sigma_i,   g_i = sigma_i / E,   E = sqrt(f + kappa)
//   r~_i = r_i / (1 + (h_i / 2) g_i^2)
//   W   <- W - (lr / E) sum_i r~_i Q_i
//   r_i <- xi_i r~_i + (1 - xi_i) E(next)
//
// Practical mode follows the implementation recipe: Frobenius-normalized
// gradient, epsilon guards, a smoothing-factor relaxation of r, the raw
// spectral tail for the remaining directions, and heavy-ball momentum.

enum class SpecMuonMode { kTheory, kPractical };

inline const char* to_string(SpecMuonMode m) { return m == SpecMuonMode::kTheory ? "theory" : "practical"; }

struct SpecMuonConfig {
  double lr = 3e-3;
  double momentum = 0.9;
  std::size_t k_r = 6;  // rtop; clamped per block to min(rows, cols)
  double sav_eta = 0.2;
  double psi = 0.95;
  double kappa = 0.0;
  double eps = 1e-8;
  SpecMuonMode mode = SpecMuonMode::kPractical;
  // Exponent p of the mode magnitude in the predictor denominator. Unset
  // means the mode's own default: 2 in theory mode, 1 in practical mode.
  std::optional<int> predictor_power;
  XiCoefficients xi_form = XiCoefficients::kInequality;

  static SpecMuonConfig theory(double lr, std::size_t k_r, double kappa = 1.0, double psi = 0.95) {
    SpecMuonConfig c;
    c.mode = SpecMuonMode::kTheory;
    c.lr = lr;
    c.k_r = k_r;
    c.kappa = kappa;
    c.psi = psi;
    c.momentum = 0.0;
    return c;
  }

  static SpecMuonConfig practical(double lr, std::size_t k_r, double momentum = 0.9, double sav_eta = 0.2) {
    SpecMuonConfig c;
    c.mode = SpecMuonMode::kPractical;
    c.lr = lr;
    c.k_r = k_r;
    c.momentum = momentum;
    c.sav_eta = sav_eta;
    return c;
  }

  int power() const { return predictor_power.value_or(mode == SpecMuonMode::kTheory ? 2 : 1); }

  void validate() const {
    if (!(lr > 0.0)) throw ArgumentError("specmuon: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("specmuon: momentum must lie in [0, 1)");
    if (!(eps > 0.0)) throw ArgumentError("specmuon: eps must be > 0");
    if (predictor_power && *predictor_power != 1 && *predictor_power != 2)
      throw ArgumentError("specmuon: predictor_power must be 1 or 2");
    if (mode == SpecMuonMode::kTheory) {
      if (!(kappa > 0.0)) throw ArgumentError("specmuon theory mode: kappa must be > 0");
      if (momentum != 0.0) throw ArgumentError("specmuon theory mode: momentum must be 0");
      if (!(psi >= 0.0 && psi < 1.0)) throw ArgumentError("specmuon theory mode: psi must lie in [0, 1)");
    } else {
      if (!(kappa >= 0.0)) throw ArgumentError("specmuon practical mode: kappa must be >= 0");
      if (!(sav_eta > 0.0 && sav_eta <= 1.0)) throw ArgumentError("specmuon practical mode: sav_eta must lie in (0, 1]");
    }
  }
};

/// Auxiliary variables of one block, indexed by descending-sigma rank.
/// Empty until the first step initializes them to the starting energy root.
struct ModeState {
  std::vector<double> r_modes;
  std::size_t k_r = 0;

  bool initialized() const noexcept { return !r_modes.empty() || k_r == 0; }
  double min_r() const {
    return r_modes.empty() ? 0.0 : *std::min_element(r_modes.begin(), r_modes.end());
  }
};

struct MomentumBuffer {
  Matrix b;
};

inline std::size_t effective_rank_budget(const Matrix& block, std::size_t k_r) {
  return std::min(k_r, block.min_dim());
}

// ---------------------------------------------------------------------------
// Theory mode

/// One mode's terms within a theory-mode step.
struct TheoryModeTerm {
  std::size_t index = 0;
  double sigma = 0.0;
  double h = 0.0;
  double g = 0.0;
  double r_prev = 0.0;
  double r_tilde = 0.0;
  double projected_increment = 0.0;  // <dW, Q_i>_F measured on the aggregate update
  double dissipation = 0.0;          // D_i = <dW, Q_i>_F^2 / h_i
  double xi = 0.0;
  bool xi_feasible = true;
};

struct TheoryPrediction {
  double e_k = 0.0;
  bool stalled = false;
  std::vector<TheoryModeTerm> terms;  // retained (non-skipped) modes only
  double step_fro = 0.0;
};

inline constexpr double kSigmaFloor = 1e-14;

namespace detail {

inline void init_modes(ModeState& modes, const Matrix& block, std::size_t k_r, double energy) {
  if (modes.r_modes.empty()) {
    modes.k_r = effective_rank_budget(block, k_r);
    modes.r_modes.assign(modes.k_r, energy);
  }
}

}  // namespace detail

/// Predictor and parameter update of a theory-mode step. `block.value` is
/// advanced in place; the relaxation needs f at the new point and is done by
/// specmuon_theory_relax once every block has moved.
inline TheoryPrediction specmuon_theory_predict(ParamBlock& block, ModeState& modes, double loss,
                                                const SpecMuonConfig& cfg) {
  if (cfg.mode != SpecMuonMode::kTheory) throw ArgumentError("specmuon_theory_predict: config is not in theory mode");
  cfg.validate();
  block.validate();
  TheoryPrediction pred;
  pred.e_k = energy_root(loss, cfg.kappa);
  detail::init_modes(modes, block.value, cfg.k_r, pred.e_k);
  if (modes.k_r == 0) return pred;

  const SvdFactors svd = thin_svd(block.grad, modes.k_r);
  if (svd.rank() == 0 || svd.sigma[0] <= kSigmaFloor) {
    pred.stalled = true;
    return pred;
  }
  const double floor = std::max(kSigmaFloor, cfg.eps * svd.sigma[0]);
  const int p = cfg.power();
  Matrix delta(block.value.rows(), block.value.cols());
  for (std::size_t i = 0; i < svd.rank(); ++i) {
    if (svd.sigma[i] <= floor) continue;
    TheoryModeTerm t;
    t.index = i;
    t.sigma = svd.sigma[i];
    t.h = cfg.lr / t.sigma;
    t.g = t.sigma / pred.e_k;
    t.r_prev = modes.r_modes[i];
    t.r_tilde = t.r_prev / (1.0 + 0.5 * t.h * (p == 2 ? t.g * t.g : t.g));
    delta = rank_one_accumulate(std::move(delta), -(cfg.lr / pred.e_k) * t.r_tilde, svd.u[i], svd.v[i]);
    pred.terms.push_back(t);
  }
  for (std::size_t j = 0; j < pred.terms.size(); ++j) {
    auto& t = pred.terms[j];
    t.projected_increment = bilinear(svd.u[t.index], delta, svd.v[t.index]);
    t.dissipation = t.projected_increment * t.projected_increment / t.h;
  }
  pred.step_fro = frobenius_norm(delta);
  block.value += delta;
  block.value.check_finite("specmuon_theory_predict");
  return pred;
}

/// r_i <- xi_i r~_i + (1 - xi_i) E(next) for each retained mode.
inline void specmuon_theory_relax(ModeState& modes, TheoryPrediction& pred, double loss_next,
                                  const SpecMuonConfig& cfg) {
  if (pred.terms.empty()) return;
  const double e_next = energy_root(loss_next, cfg.kappa);
  for (auto& t : pred.terms) {
    const XiSolution sol = rsav_xi_solution(t.r_tilde, t.r_prev, e_next, t.dissipation, cfg.psi, cfg.xi_form);
    t.xi = sol.xi;
    t.xi_feasible = sol.feasible;
    modes.r_modes[t.index] = sol.xi * t.r_tilde + (1.0 - sol.xi) * e_next;
  }
}

struct TheoryStep {
  ParamBlock block;
  ModeState modes;
  TheoryPrediction detail;
  double loss_after = 0.0;
};

/// Single-block theory-mode step. `loss_fn` evaluates f at a candidate W.
inline TheoryStep specmuon_theory_step(ParamBlock block, ModeState modes, double loss,
                                       const std::function<double(const Matrix&)>& loss_fn,
                                       const SpecMuonConfig& cfg) {
  TheoryStep out;
  out.detail = specmuon_theory_predict(block, modes, loss, cfg);
  out.loss_after = loss;
  if (!out.detail.terms.empty()) {
    const ParamBlock probe = block;
    out.loss_after = evaluate_checked([&](std::span<const ParamBlock> b) { return loss_fn(b[0].value); },
                                      std::span<const ParamBlock>(&probe, 1));
    specmuon_theory_relax(modes, out.detail, out.loss_after, cfg);
  }
  out.block = std::move(block);
  out.modes = std::move(modes);
  return out;
}

// ---------------------------------------------------------------------------
// Practical mode

struct PracticalModeTerm {
  double s = 0.0;        // singular value of the normalized gradient
  double eta_j = 0.0;    // lr / (s + eps)
  double dg_norm = 0.0;  // ||s u v^T||_F / (sqrt(f) + eps)
  double r_prev = 0.0;
  double r_new = 0.0;
  double chi = 0.0;
  double r_next = 0.0;
};

struct PracticalStep {
  ParamBlock block;
  ModeState modes;
  MomentumBuffer buffer;
  Matrix direction;  // O
  std::vector<PracticalModeTerm> terms;
  double step_fro = 0.0;
};

inline PracticalStep specmuon_practical_step(ParamBlock block, ModeState modes, MomentumBuffer buffer, double loss,
                                             const SpecMuonConfig& cfg) {
  if (cfg.mode != SpecMuonMode::kPractical)
    throw ArgumentError("specmuon_practical_step: config is not in practical mode");
  cfg.validate();
  block.validate();
  if (!(loss >= 0.0)) throw EnergyDomainError("specmuon practical mode: loss must be >= 0");
  const double root = std::sqrt(loss + cfg.kappa);
  detail::init_modes(modes, block.value, cfg.k_r, root);
  if (buffer.b.empty()) buffer.b = Matrix(block.value.rows(), block.value.cols());
  if (!buffer.b.same_shape(block.value)) throw DimensionError("specmuon: momentum buffer shape mismatch");

  const double gnorm = frobenius_norm(block.grad);
  Matrix ghat = block.grad;
  for (double& x : ghat.data()) x = x / (gnorm + cfg.eps);

  PracticalStep out;
  Matrix direction(block.value.rows(), block.value.cols());
  Matrix residual = ghat;
  if (modes.k_r > 0) {
    const SvdFactors svd = thin_svd(ghat, modes.k_r);
    const int p = cfg.power();
    const double xi = cfg.sav_eta;
    for (std::size_t j = 0; j < svd.rank(); ++j) {
      PracticalModeTerm t;
      t.s = svd.sigma[j];
      t.eta_j = cfg.lr / (t.s + cfg.eps);
      t.dg_norm = t.s * norm2(svd.u[j]) * norm2(svd.v[j]) / (root + cfg.eps);
      t.r_prev = modes.r_modes[j];
      t.r_new = t.r_prev / (1.0 + 0.5 * t.eta_j * (p == 2 ? t.dg_norm * t.dg_norm : t.dg_norm));
      direction = rank_one_accumulate(std::move(direction), t.r_new / (root + cfg.eps), svd.u[j], svd.v[j]);
      residual = rank_one_accumulate(std::move(residual), -t.s, svd.u[j], svd.v[j]);

      const double gap = t.r_new - t.r_prev;
      const double big_t = (1.0 - xi) * t.r_new * t.r_new + xi * t.r_prev * t.r_prev + (1.0 - xi) * gap * gap;
      t.chi = (root - std::sqrt(big_t)) / (root - t.r_new + cfg.eps);
      const double c = std::clamp(t.chi, 0.0, 1.0);
      t.r_next = c * t.r_new + (1.0 - c) * root;
      modes.r_modes[j] = t.r_next;
      out.terms.push_back(t);
    }
  }
  // Remaining directions: U_{k:} diag(S_{k:}) V_{k:}^T of the normalized
  // gradient, formed as ghat minus its retained part.
  direction += residual;

  buffer.b *= cfg.momentum;
  buffer.b += direction;
  block.value.axpy(-cfg.lr, buffer.b);
  block.value.check_finite("specmuon_practical_step");
  out.step_fro = cfg.lr * frobenius_norm(buffer.b);
  out.block = std::move(block);
  out.modes = std::move(modes);
  out.buffer = std::move(buffer);
  out.direction = std::move(direction);
  return out;
}

// ---------------------------------------------------------------------------

/// Multi-block SpecMuon. Each block owns its ModeState (and momentum buffer
/// in practical mode); all blocks share the scalar loss. In theory mode every
/// block is advanced first, then f is evaluated once at the new point and
/// each block's modes are relaxed against it.
class SpecMuonOptimizer final : public Optimizer {
 public:
  explicit SpecMuonOptimizer(SpecMuonConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  std::string name() const override { return "specmuon"; }
  std::size_t evaluations_per_step() const override { return cfg_.mode == SpecMuonMode::kTheory ? 2 : 1; }
  const SpecMuonConfig& config() const noexcept { return cfg_; }
  const std::vector<ModeState>& modes() const noexcept { return modes_; }

  StepReport step(std::span<ParamBlock> blocks, double loss, const LossEvaluator& evaluate) override {
    if (modes_.size() != blocks.size()) {
      modes_.assign(blocks.size(), ModeState{});
      buffers_.assign(blocks.size(), MomentumBuffer{});
    }
    return cfg_.mode == SpecMuonMode::kTheory ? theory_step(blocks, loss, evaluate) : practical_step(blocks, loss);
  }

 private:
  StepReport theory_step(std::span<ParamBlock> blocks, double loss, const LossEvaluator& evaluate) {
    StepReport report;
    report.guarantee = Guarantee::kModeDissipation;
    report.lr = cfg_.lr;
    report.psi = cfg_.psi;

    std::vector<TheoryPrediction> preds(blocks.size());
    std::vector<std::vector<double>> before(blocks.size());
    bool moved = false;
    double s = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      preds[b] = specmuon_theory_predict(blocks[b], modes_[b], loss, cfg_);
      before[b] = modes_[b].r_modes;
      moved = moved || !preds[b].terms.empty();
      s += preds[b].step_fro * preds[b].step_fro;
      report.stalled = report.stalled || preds[b].stalled;
    }
    report.step_fro = std::sqrt(s);
    double loss_after = loss;
    if (moved) {
      loss_after = evaluate_checked(evaluate, std::span<const ParamBlock>(blocks.data(), blocks.size()));
      report.loss_after = loss_after;
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      specmuon_theory_relax(modes_[b], preds[b], loss_after, cfg_);
      std::vector<double> d(before[b].size(), 0.0);
      std::vector<double> rt = before[b];
      for (const auto& t : preds[b].terms) {
        d[t.index] = t.dissipation;
        rt[t.index] = t.r_tilde;
        report.xi.push_back(t.xi);
        if (!t.xi_feasible) ++report.xi_infeasible;
        report.modes.push_back({b, t.sigma, t.r_tilde, preds[b].e_k});
      }
      report.r_prev.insert(report.r_prev.end(), before[b].begin(), before[b].end());
      report.r_next.insert(report.r_next.end(), modes_[b].r_modes.begin(), modes_[b].r_modes.end());
      report.d_terms.insert(report.d_terms.end(), d.begin(), d.end());
      report.r_tilde.insert(report.r_tilde.end(), rt.begin(), rt.end());
    }
    return report;
  }

  StepReport practical_step(std::span<ParamBlock> blocks, double loss) {
    StepReport report;
    report.lr = cfg_.lr;
    double s = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      PracticalStep st = specmuon_practical_step(std::move(blocks[b]), std::move(modes_[b]), std::move(buffers_[b]),
                                                 loss, cfg_);
      // Modes beyond the gradient's rank keep their value and are reported as is.
      std::vector<double> prev = st.modes.r_modes;
      std::vector<double> tilde = st.modes.r_modes;
      for (std::size_t j = 0; j < st.terms.size(); ++j) {
        prev[j] = st.terms[j].r_prev;
        tilde[j] = st.terms[j].r_new;
        report.xi.push_back(std::clamp(st.terms[j].chi, 0.0, 1.0));
      }
      report.r_prev.insert(report.r_prev.end(), prev.begin(), prev.end());
      report.r_next.insert(report.r_next.end(), st.modes.r_modes.begin(), st.modes.r_modes.end());
      report.r_tilde.insert(report.r_tilde.end(), tilde.begin(), tilde.end());
      s += st.step_fro * st.step_fro;
      blocks[b] = std::move(st.block);
      modes_[b] = std::move(st.modes);
      buffers_[b] = std::move(st.buffer);
    }
    report.step_fro = std::sqrt(s);
    return report;
  }

  SpecMuonConfig cfg_;
  std::vector<ModeState> modes_;
  std::vector<MomentumBuffer> buffers_;
};

}  // namespace specmuon
