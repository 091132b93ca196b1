#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/matrix.hpp"
#include "specmuon/problem.hpp"
#include "specmuon/random.hpp"
#include "specmuon/svd.hpp"

namespace specmuon {

// ---------------------------------------------------------------------------
// Least squares: f(W) = 1/2 ||W X - Y||_F^2, grad = (W X - Y) X^T.

struct LeastSquaresSpec {
  std::size_t m = 8;
  std::size_t n = 12;
  std::size_t samples = 64;  // N
  double condition = 100.0;  // of X X^T
  double noise = 0.01;
  std::uint64_t seed = 0;
};

struct LeastSquaresInstance {
  Matrix X;  // n x N
  Matrix Y;  // m x N
  std::uint64_t seed = 0;

  /// X: Gaussian with its singular values replaced by a geometric ramp from
  /// 1 down to 1/sqrt(condition). Y = W* X + noise * E with W*, E Gaussian.
  static LeastSquaresInstance generate(const LeastSquaresSpec& spec) {
    if (spec.samples < spec.n) throw ArgumentError("least squares: need samples >= n for a full-rank Gram matrix");
    if (!(spec.condition >= 1.0)) throw ArgumentError("least squares: condition must be >= 1");
    Rng rng(spec.seed);
    const Matrix g = rng.normal_matrix(spec.n, spec.samples);
    const SvdFactors f = thin_svd(g, spec.n);
    Matrix x(spec.n, spec.samples);
    for (std::size_t i = 0; i < f.rank(); ++i) {
      const double t = spec.n > 1 ? static_cast<double>(i) / static_cast<double>(spec.n - 1) : 0.0;
      x = rank_one_accumulate(std::move(x), std::pow(spec.condition, -0.5 * t), f.u[i], f.v[i]);
    }
    const Matrix w_star = rng.normal_matrix(spec.m, spec.n);
    Matrix y = matmul(w_star, x);
    y.axpy(spec.noise, rng.normal_matrix(spec.m, spec.samples));
    return {std::move(x), std::move(y), spec.seed};
  }
};

inline std::pair<double, Matrix> least_squares_eval_grad(const LeastSquaresInstance& inst, const Matrix& w) {
  if (w.cols() != inst.X.rows() || w.rows() != inst.Y.rows())
    throw DimensionError("least_squares_eval_grad: W shape incompatible with X, Y");
  Matrix residual = matmul(w, inst.X);
  residual -= inst.Y;
  const double loss = 0.5 * frobenius_inner(residual, residual);
  return {loss, matmul_nt(residual, inst.X)};
}

class LeastSquaresProblem final : public Problem {
 public:
  explicit LeastSquaresProblem(LeastSquaresInstance inst) : inst_(std::move(inst)) {
    if (inst_.X.cols() != inst_.Y.cols()) throw DimensionError("least squares: X and Y sample counts differ");
    // Constants from the SVD of X: L = s_max^2, mu = s_min^2 and the
    // minimum via W_opt = Y V S^-1 U^T.
    const SvdFactors f = thin_svd(inst_.X, inst_.X.min_dim());
    if (f.rank() > 0) constants_.L = f.sigma.front() * f.sigma.front();
    if (f.rank() == inst_.X.rows() && inst_.X.rows() <= inst_.X.cols()) {
      constants_.mu = f.sigma.back() * f.sigma.back();
      Matrix w_opt(inst_.Y.rows(), inst_.X.rows());
      for (std::size_t i = 0; i < f.rank(); ++i) {
        Vector yv(inst_.Y.rows(), 0.0);
        for (std::size_t r = 0; r < inst_.Y.rows(); ++r)
          for (std::size_t c = 0; c < inst_.Y.cols(); ++c) yv[r] += inst_.Y(r, c) * f.v[i][c];
        w_opt = rank_one_accumulate(std::move(w_opt), 1.0 / f.sigma[i], yv, f.u[i]);
      }
      constants_.f_star = least_squares_eval_grad(inst_, w_opt).first;
      w_opt_ = std::move(w_opt);
    }
  }

  explicit LeastSquaresProblem(const LeastSquaresSpec& spec) : LeastSquaresProblem(LeastSquaresInstance::generate(spec)) {}

  std::string name() const override { return "least_squares"; }
  std::vector<Shape> param_shapes() const override { return {{inst_.Y.rows(), inst_.X.rows()}}; }
  std::vector<std::string> param_names() const override { return {"W"}; }
  std::vector<Matrix> initial_point() const override { return {Matrix(inst_.Y.rows(), inst_.X.rows())}; }

  double loss(std::span<const Matrix> params) const override {
    check_params(params);
    return least_squares_eval_grad(inst_, params[0]).first;
  }

  Evaluation evaluate(std::span<const Matrix> params) const override {
    check_params(params);
    auto [loss, grad] = least_squares_eval_grad(inst_, params[0]);
    Evaluation ev;
    ev.loss = loss;
    ev.grads.push_back(std::move(grad));
    return ev;
  }

  ProblemConstants constants() const override { return constants_; }
  const LeastSquaresInstance& instance() const noexcept { return inst_; }
  const Matrix& minimizer() const noexcept { return w_opt_; }

 private:
  LeastSquaresInstance inst_;
  ProblemConstants constants_;
  Matrix w_opt_;
};

// ---------------------------------------------------------------------------
// Separable quadratic f(theta) = 1/2 sum lambda_i theta_i^2.

struct QuadraticSpec {
  std::size_t dim = 50;
  double eig_min = 1e-2;
  double eig_max = 1.0;
  // Block layout of theta (row-major). rows = 0 means a dim x 1 column.
  std::size_t rows = 0;
  std::uint64_t seed = 0;
};

struct SpectrumQuadratic {
  std::vector<double> eigenvalues;  // descending

  /// Log-spaced from eig_max down to eig_min; constant when they are equal.
  static SpectrumQuadratic log_spaced(std::size_t dim, double eig_min, double eig_max) {
    if (dim == 0) throw ArgumentError("quadratic: dim must be > 0");
    if (!(eig_min > 0.0) || !(eig_max >= eig_min)) throw ArgumentError("quadratic: need 0 < eig_min <= eig_max");
    SpectrumQuadratic q;
    for (std::size_t i = 0; i < dim; ++i) {
      const double t = dim > 1 ? static_cast<double>(i) / static_cast<double>(dim - 1) : 0.0;
      q.eigenvalues.push_back(eig_max * std::pow(eig_min / eig_max, t));
    }
    return q;
  }

  double L() const { return eigenvalues.front(); }
  double mu() const { return eigenvalues.back(); }
};

inline std::pair<double, std::vector<double>> quadratic_eval_grad(const SpectrumQuadratic& q,
                                                                  std::span<const double> theta) {
  if (theta.size() != q.eigenvalues.size()) throw DimensionError("quadratic_eval_grad: dimension mismatch");
  double f = 0.0;
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    g[i] = q.eigenvalues[i] * theta[i];
    f += 0.5 * g[i] * theta[i];
  }
  return {f, std::move(g)};
}

class QuadraticProblem final : public Problem {
 public:
  explicit QuadraticProblem(const QuadraticSpec& spec)
      : spec_(spec), q_(SpectrumQuadratic::log_spaced(spec.dim, spec.eig_min, spec.eig_max)) {
    rows_ = spec.rows == 0 ? spec.dim : spec.rows;
    if (spec.dim % rows_ != 0) throw ArgumentError("quadratic: rows must divide dim");
    cols_ = spec.dim / rows_;
  }

  std::string name() const override { return "quadratic"; }
  std::vector<Shape> param_shapes() const override { return {{rows_, cols_}}; }
  std::vector<std::string> param_names() const override { return {"theta"}; }
  std::vector<Matrix> initial_point() const override {
    Rng rng(spec_.seed);
    return {rng.normal_matrix(rows_, cols_)};
  }

  double loss(std::span<const Matrix> params) const override {
    check_params(params);
    return quadratic_eval_grad(q_, params[0].data()).first;
  }

  Evaluation evaluate(std::span<const Matrix> params) const override {
    check_params(params);
    auto [f, g] = quadratic_eval_grad(q_, params[0].data());
    Evaluation ev;
    ev.loss = f;
    ev.grads.emplace_back(rows_, cols_, std::move(g));
    return ev;
  }

  ProblemConstants constants() const override { return {q_.L(), q_.mu(), 0.0}; }
  const SpectrumQuadratic& spectrum() const noexcept { return q_; }

 private:
  QuadraticSpec spec_;
  SpectrumQuadratic q_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
};

// ---------------------------------------------------------------------------
// One-hidden-layer tanh network y(x) = W2 tanh(W1 x) fitted by mean squared
// error to u(x) = -sin(pi x) on equispaced points of [-1, 1].

struct MlpSpec {
  std::size_t hidden = 16;
  std::size_t points = 128;
  std::uint64_t seed = 0;
};

struct SmallMlpRegression {
  std::size_t hidden = 16;
  std::vector<double> x;
  std::vector<double> target;

  static SmallMlpRegression make(std::size_t hidden, std::size_t points) {
    if (hidden == 0 || points == 0) throw ArgumentError("mlp: hidden and points must be > 0");
    SmallMlpRegression m;
    m.hidden = hidden;
    const double pi = std::acos(-1.0);
    for (std::size_t j = 0; j < points; ++j) {
      const double xj = points > 1 ? -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(points - 1) : 0.0;
      m.x.push_back(xj);
      m.target.push_back(-std::sin(pi * xj));
    }
    return m;
  }
};

/// Loss and exact gradients by manual backpropagation.
inline std::tuple<double, Matrix, Matrix> mlp_eval_grad(const SmallMlpRegression& m, const Matrix& w1,
                                                        const Matrix& w2) {
  if (w1.rows() != m.hidden || w1.cols() != 1 || w2.rows() != 1 || w2.cols() != m.hidden)
    throw DimensionError("mlp_eval_grad: expected W1 Hx1 and W2 1xH");
  const std::size_t points = m.x.size();
  const double scale = 2.0 / static_cast<double>(points);
  Matrix g1(m.hidden, 1);
  Matrix g2(1, m.hidden);
  std::vector<double> act(m.hidden);
  double loss = 0.0;
  for (std::size_t j = 0; j < points; ++j) {
    double y = 0.0;
    for (std::size_t h = 0; h < m.hidden; ++h) {
      act[h] = std::tanh(w1(h, 0) * m.x[j]);
      y += w2(0, h) * act[h];
    }
    const double err = y - m.target[j];
    loss += err * err;
    for (std::size_t h = 0; h < m.hidden; ++h) {
      g2(0, h) += scale * err * act[h];
      g1(h, 0) += scale * err * w2(0, h) * (1.0 - act[h] * act[h]) * m.x[j];
    }
  }
  return {loss / static_cast<double>(points), std::move(g1), std::move(g2)};
}

class MlpProblem final : public Problem {
 public:
  explicit MlpProblem(const MlpSpec& spec) : spec_(spec), net_(SmallMlpRegression::make(spec.hidden, spec.points)) {}

  std::string name() const override { return "mlp"; }
  std::vector<Shape> param_shapes() const override { return {{spec_.hidden, 1}, {1, spec_.hidden}}; }
  std::vector<std::string> param_names() const override { return {"W1", "W2"}; }
  std::vector<Matrix> initial_point() const override {
    Rng rng(spec_.seed);
    Matrix w1 = rng.normal_matrix(spec_.hidden, 1);
    Matrix w2 = rng.normal_matrix(1, spec_.hidden, 1.0 / std::sqrt(static_cast<double>(spec_.hidden)));
    return {std::move(w1), std::move(w2)};
  }

  double loss(std::span<const Matrix> params) const override {
    check_params(params);
    return std::get<0>(mlp_eval_grad(net_, params[0], params[1]));
  }

  Evaluation evaluate(std::span<const Matrix> params) const override {
    check_params(params);
    auto [loss, g1, g2] = mlp_eval_grad(net_, params[0], params[1]);
    Evaluation ev;
    ev.loss = loss;
    ev.grads.push_back(std::move(g1));
    ev.grads.push_back(std::move(g2));
    return ev;
  }

  // Mean squared error is bounded below by 0; no L or mu is known.
  ProblemConstants constants() const override { return {}; }
  const SmallMlpRegression& network() const noexcept { return net_; }

 private:
  MlpSpec spec_;
  SmallMlpRegression net_;
};

}  // namespace specmuon
