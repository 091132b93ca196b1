#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/matrix.hpp"
#include "specmuon/random.hpp"

namespace specmuon {

/// Known analytic constants of an objective: smoothness L, PL constant mu
/// and infimum f*.
struct ProblemConstants {
  std::optional<double> L;
  std::optional<double> mu;
  std::optional<double> f_star;
};

struct Evaluation {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

using Shape = std::pair<std::size_t, std::size_t>;

/// A differentiable objective over a list of matrix parameters. Instances
/// are immutable after construction.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Shape> param_shapes() const = 0;
  virtual std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < param_shapes().size(); ++i) names.push_back("W" + std::to_string(i + 1));
    return names;
  }
  virtual std::vector<Matrix> initial_point() const = 0;
  virtual double loss(std::span<const Matrix> params) const = 0;
  virtual Evaluation evaluate(std::span<const Matrix> params) const = 0;
  virtual ProblemConstants constants() const { return {}; }

 protected:
  void check_params(std::span<const Matrix> params) const {
    const auto shapes = param_shapes();
    if (params.size() != shapes.size()) throw DimensionError(name() + ": wrong number of parameter blocks");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (params[i].rows() != shapes[i].first || params[i].cols() != shapes[i].second) {
        throw DimensionError(name() + ": parameter block " + std::to_string(i) + " has shape " +
                             std::to_string(params[i].rows()) + "x" + std::to_string(params[i].cols()));
      }
    }
  }
};

/// Central differences (f(x + s e) - f(x - s e)) / (2 s), one coordinate at a time.
inline std::vector<Matrix> finite_diff_grad(const Problem& p, std::span<const Matrix> params, double step) {
  if (!(step > 0.0)) throw ArgumentError("finite_diff_grad: step must be > 0");
  std::vector<Matrix> work(params.begin(), params.end());
  std::vector<Matrix> grads;
  for (std::size_t b = 0; b < work.size(); ++b) {
    Matrix g(work[b].rows(), work[b].cols());
    for (std::size_t i = 0; i < work[b].size(); ++i) {
      double& x = work[b].data()[i];
      const double saved = x;
      x = saved + step;
      const double plus = p.loss(work);
      x = saved - step;
      const double minus = p.loss(work);
      x = saved;
      g.data()[i] = (plus - minus) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Worst block-wise relative error ||fd - g||_F / max(||g||_F, ||fd||_F, 1e-12).
inline double gradient_relative_error(std::span<const Matrix> analytic, std::span<const Matrix> numeric) {
  double worst = 0.0;
  for (std::size_t b = 0; b < analytic.size(); ++b) {
    const double denom = std::max({frobenius_norm(analytic[b]), frobenius_norm(numeric[b]), 1e-12});
    worst = std::max(worst, frobenius_norm(analytic[b] - numeric[b]) / denom);
  }
  return worst;
}

struct GradientGateResult {
  bool passed = true;
  double worst_relative_error = 0.0;
  std::size_t points = 0;
};

/// Compares the analytic gradient with central differences at `points`
/// standard-normal parameter draws.
inline GradientGateResult gradient_gate(const Problem& p, std::uint64_t seed = 20240601, std::size_t points = 20,
                                        double rel_tol = 1e-6, double step = 1e-6) {
  GradientGateResult out;
  out.points = points;
  Rng rng(seed);
  for (std::size_t k = 0; k < points; ++k) {
    std::vector<Matrix> x;
    for (const auto& [r, c] : p.param_shapes()) x.push_back(rng.normal_matrix(r, c));
    const Evaluation ev = p.evaluate(x);
    const auto fd = finite_diff_grad(p, x, step);
    out.worst_relative_error = std::max(out.worst_relative_error, gradient_relative_error(ev.grads, fd));
  }
  out.passed = out.worst_relative_error <= rel_tol;
  return out;
}

}  // namespace specmuon
