#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specmuon/diagnostics.hpp"
#include "specmuon/errors.hpp"
#include "specmuon/optimizer.hpp"
#include "specmuon/problem.hpp"

namespace specmuon {

struct RunOptions {
  std::size_t iterations = 100;
  bool record_time = false;
  // Stop once f - f* <= stop_gap (f* = 0 if the problem declares none).
  std::optional<double> stop_gap;

  static RunOptions steps(std::size_t n) {
    RunOptions o;
    o.iterations = n;
    return o;
  }
};

struct RunResult {
  std::vector<TrajectoryRecord> records;
  TheoremLedger ledger;
  std::vector<Matrix> params;
  double final_loss = 0.0;
  std::size_t evaluations = 0;
  // First iteration k with f(Theta^k) - f* <= stop_gap; iterations + 1 means never.
  std::optional<std::size_t> iters_to_gap;
  bool diverged = false;
  std::string error;
};

/// Runs `opt` on `p` from the problem's initial point, one trajectory record
/// and one theorem audit per step.
inline RunResult run_optimizer(const Problem& p, Optimizer& opt, const RunOptions& options) {
  if (options.iterations == 0) throw ArgumentError("run_optimizer: iterations must be >= 1");
  RunResult out;
  const auto names = p.param_names();
  const auto constants = p.constants();
  const double f_star = constants.f_star.value_or(0.0);
  std::vector<ParamBlock> blocks;
  for (auto& v : p.initial_point()) {
    blocks.push_back({names[blocks.size()], v, Matrix(v.rows(), v.cols())});
  }
  std::vector<Matrix> scratch(blocks.size());
  auto loss_at = [&](std::span<const ParamBlock> b) {
    for (std::size_t i = 0; i < b.size(); ++i) scratch[i] = b[i].value;
    ++out.evaluations;
    return p.loss(scratch);
  };
  auto reached = [&](double loss) { return options.stop_gap && loss - f_star <= *options.stop_gap; };

  try {
    for (std::size_t k = 0; k < options.iterations; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < blocks.size(); ++i) scratch[i] = blocks[i].value;
      Evaluation ev = p.evaluate(scratch);
      ++out.evaluations;
      if (!std::isfinite(ev.loss)) throw EvaluationError("non-finite loss");
      if (reached(ev.loss) && !out.iters_to_gap) {
        out.iters_to_gap = k;
        break;
      }
      for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].grad = std::move(ev.grads[i]);
      const StepReport rep = opt.step(blocks, ev.loss, loss_at);
      TrajectoryRecord rec = make_record(k, ev.loss, grad_fro(blocks), rep, constants.L);
      if (options.record_time) {
        rec.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
      }
      audit_step(rec, rep, out.ledger);
      out.records.push_back(std::move(rec));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) scratch[i] = blocks[i].value;
    out.final_loss = p.loss(scratch);
    ++out.evaluations;
    if (!std::isfinite(out.final_loss)) throw EvaluationError("non-finite loss");
    if (!out.iters_to_gap && reached(out.final_loss)) out.iters_to_gap = out.records.size();
  } catch (const Error& e) {
    out.diverged = true;
    out.error = e.what();
    out.final_loss = std::numeric_limits<double>::infinity();
  }
  for (auto& b : blocks) out.params.push_back(std::move(b.value));
  return out;
}

}  // namespace specmuon
