#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/optimizer.hpp"
#include "specmuon/problem.hpp"
#include "specmuon/specmuon.hpp"

namespace specmuon {

/// Absolute slack on every energy residual.
inline constexpr double kTheoremSlack = 1e-9;
/// Absolute slack on the descent check.
inline constexpr double kDescentSlack = 1e-12;

/// One iteration of a run. Energy columns are NaN for optimizers without
/// auxiliary variables; dissipation_rhs is NaN when the step carries no
/// dissipation guarantee.
struct TrajectoryRecord {
  std::size_t iter = 0;
  double loss = 0.0;
  double grad_fro = 0.0;
  double modified_energy = std::numeric_limits<double>::quiet_NaN();
  double dissipation_lhs = std::numeric_limits<double>::quiet_NaN();
  double dissipation_rhs = std::numeric_limits<double>::quiet_NaN();
  double step_fro = 0.0;
  double min_r = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> xi_values;
  std::optional<bool> eta_condition_ok;
  std::int64_t wall_ns = 0;
  // Rate-analysis quantities (theory mode only); not part of the CSV.
  std::optional<double> c0;
  std::optional<double> tau;

  double max_xi() const {
    if (xi_values.empty()) return std::numeric_limits<double>::quiet_NaN();
    return *std::max_element(xi_values.begin(), xi_values.end());
  }
};

// ---------------------------------------------------------------------------
// Dissipation

struct DissipationCheck {
  bool ok = true;         // global and every mode
  bool global_ok = true;  // sum r_next^2 - sum r_prev^2 <= -(1 - psi) sum D + slack
  std::size_t modes_failed = 0;
  double residual = 0.0;  // lhs - rhs of the global inequality
};

inline DissipationCheck check_mode_dissipation(std::span<const double> r_prev, std::span<const double> r_next,
                                               std::span<const double> d_terms, double psi) {
  if (r_prev.size() != r_next.size() || d_terms.size() != r_prev.size())
    throw DimensionError("check_mode_dissipation: mode counts differ");
  DissipationCheck out;
  double lhs = 0.0;
  double rhs = 0.0;
  for (std::size_t i = 0; i < r_prev.size(); ++i) {
    const double li = r_next[i] * r_next[i] - r_prev[i] * r_prev[i];
    const double ri = -(1.0 - psi) * d_terms[i];
    if (!(li <= ri + kTheoremSlack)) ++out.modes_failed;
    lhs += li;
    rhs += ri;
  }
  out.residual = lhs - rhs;
  out.global_ok = lhs <= rhs + kTheoremSlack;
  out.ok = out.global_ok && out.modes_failed == 0;
  return out;
}

inline bool check_mode_dissipation(const ModeState& prev, const ModeState& next, std::span<const double> d_terms,
                                   double psi) {
  return check_mode_dissipation(prev.r_modes, next.r_modes, d_terms, psi).ok;
}

// ---------------------------------------------------------------------------
// Positivity

inline bool check_positivity(std::span<const double> r) {
  return std::all_of(r.begin(), r.end(), [](double x) { return x > 0.0; });
}

inline bool check_positivity(const ModeState& modes) { return check_positivity(modes.r_modes); }

// ---------------------------------------------------------------------------
// Local stepsize condition for descent: eta <= 2 sigma_i E / (L r~_i).

inline std::optional<bool> check_eta_condition(double sigma_i, double e_k, double r_tilde_i, double eta,
                                               std::optional<double> L) {
  if (eta == 0.0) return true;
  if (!L || !(*L > 0.0)) return std::nullopt;
  return eta * (*L) * r_tilde_i <= 2.0 * sigma_i * e_k;
}

/// The condition over every retained mode of a theory-mode step; nullopt
/// when the step has no modes or L is unknown.
inline std::optional<bool> check_eta_condition(const StepReport& report, std::optional<double> L) {
  if (report.guarantee != Guarantee::kModeDissipation || report.modes.empty()) return std::nullopt;
  bool all = true;
  for (const auto& m : report.modes) {
    const auto ok = check_eta_condition(m.sigma, m.energy, m.r_tilde, report.lr, L);
    if (!ok) return std::nullopt;
    all = all && *ok;
  }
  return all;
}

// ---------------------------------------------------------------------------
// Alignment factor and step scaling of a theory-mode step.
//
// With A = sum r~_i sigma_i and B = sum r~_i^2 the smoothness bound gives
//   f(next) <= f - (lr / E) A + (L / 2) (lr / E)^2 B,
// minimized at lr* = E A / (L B). tau = lr / lr*.

inline std::optional<double> alignment_c0(const StepReport& report) {
  double a = 0.0, b = 0.0, s = 0.0;
  for (const auto& m : report.modes) {
    a += m.r_tilde * m.sigma;
    b += m.r_tilde * m.r_tilde;
    s += m.sigma * m.sigma;
  }
  if (!(b > 0.0) || !(s > 0.0)) return std::nullopt;
  return a * a / (b * s);
}

inline std::optional<double> step_scaling_tau(const StepReport& report, std::optional<double> L) {
  if (!L || report.modes.empty()) return std::nullopt;
  double a = 0.0, b = 0.0;
  for (const auto& m : report.modes) {
    a += m.r_tilde * m.sigma;
    b += m.r_tilde * m.r_tilde;
  }
  const double e = report.modes.front().energy;
  if (!(a > 0.0)) return std::nullopt;
  return report.lr * (*L) * b / (e * a);
}

// ---------------------------------------------------------------------------
// Trajectory records

inline double grad_fro(std::span<const ParamBlock> blocks) { return std::sqrt(squared_grad_norm(blocks)); }

/// Builds the record of step `iter` taken at loss `loss` with the given gradients.
inline TrajectoryRecord make_record(std::size_t iter, double loss, double gfro, const StepReport& report,
                                    std::optional<double> L) {
  TrajectoryRecord rec;
  rec.iter = iter;
  rec.loss = loss;
  rec.grad_fro = gfro;
  rec.step_fro = report.step_fro;
  rec.xi_values = report.xi;
  if (report.has_energy()) {
    rec.modified_energy = report.energy_before();
    rec.dissipation_lhs = report.energy_after() - report.energy_before();
    double lo = std::numeric_limits<double>::infinity();
    for (double r : report.r_prev) lo = std::min(lo, r);
    for (double r : report.r_next) lo = std::min(lo, r);
    rec.min_r = lo;
  }
  switch (report.guarantee) {
    case Guarantee::kModeDissipation:
    case Guarantee::kScalarRelaxed:
      rec.dissipation_rhs = -(1.0 - report.psi) * report.d_sum();
      break;
    case Guarantee::kScalarPredictor:
      rec.dissipation_rhs = -report.d_sum();
      break;
    case Guarantee::kNone:
      break;
  }
  rec.eta_condition_ok = check_eta_condition(report, L);
  rec.c0 = alignment_c0(report);
  rec.tau = step_scaling_tau(report, L);
  return rec;
}

// ---------------------------------------------------------------------------
// Per-run theorem ledger

struct TheoremTally {
  std::size_t checked = 0;
  std::size_t failed = 0;
  void add(bool ok) {
    ++checked;
    if (!ok) ++failed;
  }
};

struct TheoremLedger {
  TheoremTally dissipation;
  TheoremTally positivity;
  TheoremTally descent;  // steps where the local stepsize condition held
  std::size_t xi_infeasible = 0;
  std::size_t stalls = 0;

  std::size_t failures() const { return dissipation.failed + positivity.failed + descent.failed; }

  TheoremLedger& operator+=(const TheoremLedger& o) {
    for (auto [a, b] : {std::pair{&dissipation, &o.dissipation}, std::pair{&positivity, &o.positivity},
                        std::pair{&descent, &o.descent}}) {
      a->checked += b->checked;
      a->failed += b->failed;
    }
    xi_infeasible += o.xi_infeasible;
    stalls += o.stalls;
    return *this;
  }
};

/// Checks one step against the guarantee it claims. Momentum-free theory-mode
/// SpecMuon and the scalar schemes carry guarantees; everything else is
/// recorded but not audited.
inline void audit_step(const TrajectoryRecord& rec, const StepReport& report, TheoremLedger& ledger) {
  if (report.guarantee == Guarantee::kNone) return;
  if (report.stalled) ++ledger.stalls;
  ledger.xi_infeasible += report.xi_infeasible;
  if (report.guarantee == Guarantee::kModeDissipation) {
    ledger.dissipation.add(check_mode_dissipation(report.r_prev, report.r_next, report.d_terms, report.psi).ok);
  } else {
    ledger.dissipation.add(rec.dissipation_lhs <= rec.dissipation_rhs + kTheoremSlack);
  }
  ledger.positivity.add(check_positivity(report.r_prev) && check_positivity(report.r_next));
  if (rec.eta_condition_ok.value_or(false) && report.loss_after) {
    ledger.descent.add(*report.loss_after - rec.loss <= kDescentSlack);
  }
}

// ---------------------------------------------------------------------------
// Linear rate

struct RateEstimate {
  double fitted_contraction = 0.0;  // exp(slope) of log(f - f*) over the window
  double theoretical_rho = 0.0;     // 2 tau(2 - tau) E_lower c0_min mu / L
  double tau = 0.0;                 // window value minimizing tau(2 - tau)
  double c0_min = 0.0;
  std::vector<double> c0_series;
  std::size_t window_begin = 0;  // first iteration of the fit
  std::size_t window_end = 0;    // one past the last
  bool bound_holds = false;      // fitted <= 1 - rho + 1e-3
};

struct RateInputs {
  double f_star = 0.0;
  ProblemConstants constants;
  double kappa = 1.0;
  // Constant tau for every step; unset means per-step tau from the records,
  // with the window restricted to steps where tau lies in (0, 2].
  std::optional<double> tau;
  std::size_t min_window = 20;
};

inline constexpr double kRateTolerance = 1e-3;

/// Least-squares slope of log(f_k - f*) against k over the first window of
/// at least `min_window` consecutive points where f - f* > 1e-14 (and tau is
/// admissible), reported as a per-step contraction factor, together with
/// the theoretical rate from the window-minimum alignment factor.
inline RateEstimate estimate_rate(std::span<const TrajectoryRecord> traj, const RateInputs& in) {
  if (!in.constants.L || !in.constants.mu) throw EstimationError("estimate_rate: L and mu must be known");
  auto usable = [&](const TrajectoryRecord& r) {
    if (!(r.loss - in.f_star > 1e-14)) return false;
    if (in.tau) return true;
    return r.tau && *r.tau > 0.0 && *r.tau <= 2.0;
  };
  std::size_t begin = 0, end = 0;
  for (std::size_t i = 0; i < traj.size();) {
    if (!usable(traj[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < traj.size() && usable(traj[j])) ++j;
    if (j - i >= in.min_window) {
      begin = i;
      end = j;
      break;
    }
    i = j;
  }
  if (end - begin < in.min_window || end == 0)
    throw EstimationError("estimate_rate: no window of " + std::to_string(in.min_window) + " usable points");

  RateEstimate est;
  est.window_begin = traj[begin].iter;
  est.window_end = traj[end - 1].iter + 1;
  const double n = static_cast<double>(end - begin);
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double x = static_cast<double>(traj[i].iter);
    const double y = std::log(traj[i].loss - in.f_star);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  est.fitted_contraction = std::exp(slope);
  if (!std::isfinite(est.fitted_contraction)) throw EstimationError("estimate_rate: degenerate fit");

  double worst = std::numeric_limits<double>::infinity();
  est.c0_min = 1.0;
  for (std::size_t i = begin; i < end; ++i) {
    if (traj[i].c0) {
      est.c0_series.push_back(*traj[i].c0);
      est.c0_min = std::min(est.c0_min, *traj[i].c0);
    }
    const double t = in.tau ? *in.tau : *traj[i].tau;
    if (t * (2.0 - t) < worst) {
      worst = t * (2.0 - t);
      est.tau = t;
    }
  }
  const double e_lower = std::sqrt(in.f_star + in.kappa);
  est.theoretical_rho = 2.0 * worst * e_lower * est.c0_min * (*in.constants.mu) / (*in.constants.L);
  est.bound_holds = est.fitted_contraction <= 1.0 - est.theoretical_rho + kRateTolerance;
  return est;
}

}  // namespace specmuon
