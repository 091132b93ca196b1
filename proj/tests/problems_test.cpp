#include <gtest/gtest.h>

#include <cmath>

#include "specmuon/problem.hpp"
#include "specmuon/problems.hpp"
#include "specmuon/random.hpp"

using specmuon::Matrix;

TEST(LeastSquares, ZeroAtInterpolant) {
  specmuon::Rng rng(61);
  const Matrix x = rng.normal_matrix(4, 6), w = rng.normal_matrix(3, 4);
  const specmuon::LeastSquaresInstance inst{x, specmuon::matmul(w, x), 0};
  const auto [loss, grad] = specmuon::least_squares_eval_grad(inst, w);
  EXPECT_NEAR(loss, 0.0, 1e-24);
  EXPECT_LE(specmuon::frobenius_norm(grad), 1e-12);
}

TEST(LeastSquares, IdentityData) {
  specmuon::Rng rng(62);
  const specmuon::LeastSquaresInstance inst{Matrix::identity(3), Matrix(2, 3), 0};
  const Matrix w = rng.normal_matrix(2, 3);
  const auto [loss, grad] = specmuon::least_squares_eval_grad(inst, w);
  EXPECT_NEAR(loss, 0.5 * specmuon::frobenius_inner(w, w), 1e-14);
  EXPECT_EQ(grad, w);
}

TEST(LeastSquares, ShapeMismatch) {
  const specmuon::LeastSquaresInstance inst{Matrix::identity(3), Matrix(2, 3), 0};
  EXPECT_THROW(specmuon::least_squares_eval_grad(inst, Matrix(3, 3)), specmuon::DimensionError);
}

TEST(LeastSquares, GeneratedConstants) {
  const specmuon::LeastSquaresProblem p(specmuon::LeastSquaresSpec{});
  const auto k = p.constants();
  ASSERT_TRUE(k.L && k.mu && k.f_star);
  EXPECT_NEAR(*k.L, 1.0, 1e-12);
  EXPECT_NEAR(*k.L / *k.mu, 100.0, 1e-8);
  EXPECT_GT(*k.f_star, 0.0);
  // f* is attained at the stored minimizer, where the gradient vanishes.
  const auto ev = p.evaluate(std::vector<Matrix>{p.minimizer()});
  EXPECT_NEAR(ev.loss, *k.f_star, 1e-14);
  EXPECT_LE(specmuon::frobenius_norm(ev.grads[0]), 1e-10);
  // Loss is never below f* at random points.
  specmuon::Rng rng(63);
  for (int i = 0; i < 20; ++i) EXPECT_GE(p.loss(std::vector<Matrix>{rng.normal_matrix(8, 12)}), *k.f_star);
}

TEST(LeastSquares, SameSeedSameInstance) {
  const auto a = specmuon::LeastSquaresInstance::generate({8, 12, 64, 100.0, 0.01, 9});
  const auto b = specmuon::LeastSquaresInstance::generate({8, 12, 64, 100.0, 0.01, 9});
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.Y, b.Y);
}

TEST(Quadratic, Basics) {
  const specmuon::SpectrumQuadratic q{{1.0}};
  EXPECT_EQ(specmuon::quadratic_eval_grad(q, std::vector<double>{0.0}).first, 0.0);
  const auto [f, g] = specmuon::quadratic_eval_grad(q, std::vector<double>{2.0});
  EXPECT_EQ(f, 2.0);
  EXPECT_EQ(g, std::vector<double>{2.0});
  EXPECT_THROW(specmuon::quadratic_eval_grad(q, std::vector<double>{1.0, 2.0}), specmuon::DimensionError);
}

TEST(Quadratic, PlInequalityAndIsotropicEquality) {
  specmuon::Rng rng(64);
  const auto q = specmuon::SpectrumQuadratic::log_spaced(50, 1e-2, 1.0);
  const auto iso = specmuon::SpectrumQuadratic::log_spaced(50, 0.3, 0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> th(50);
    for (double& x : th) x = rng.normal();
    for (const auto* s : {&q, &iso}) {
      const auto [f, g] = specmuon::quadratic_eval_grad(*s, th);
      const double lhs = 0.5 * specmuon::dot(g, g);
      EXPECT_GE(lhs, s->mu() * f * (1.0 - 1e-14));
      if (s == &iso) {
        EXPECT_NEAR(lhs, s->mu() * f, 1e-12 * lhs);
      }
    }
  }
}

TEST(Quadratic, LayoutAsMatrix) {
  const specmuon::QuadraticProblem p({10, 0.5, 0.5, 5, 1});
  EXPECT_EQ(p.param_shapes()[0], (specmuon::Shape{5, 2}));
  EXPECT_THROW(specmuon::QuadraticProblem({10, 0.5, 0.5, 3, 1}), specmuon::ArgumentError);
}

TEST(Mlp, DeadOutputLayer) {
  const auto m = specmuon::SmallMlpRegression::make(4, 16);
  specmuon::Rng rng(65);
  const Matrix w1 = rng.normal_matrix(4, 1);
  const auto [loss, g1, g2] = specmuon::mlp_eval_grad(m, w1, Matrix(1, 4));
  double mean_sq = 0.0;
  for (double t : m.target) mean_sq += t * t;
  EXPECT_NEAR(loss, mean_sq / 16.0, 1e-14);
  EXPECT_EQ(g1, Matrix(4, 1));
  for (std::size_t h = 0; h < 4; ++h) {
    double ref = 0.0;
    for (std::size_t j = 0; j < 16; ++j) ref += m.target[j] * std::tanh(w1(h, 0) * m.x[j]);
    EXPECT_NEAR(g2(0, h), -2.0 * ref / 16.0, 1e-14);
  }
}

TEST(Mlp, SinglePointHandChainRule) {
  specmuon::SmallMlpRegression m;
  m.hidden = 1;
  m.x = {0.5};
  m.target = {-1.0};
  // y = 2 tanh(0.6), loss = (y + 1)^2, dL/dW2 = 2 (y + 1) tanh(0.6),
  // dL/dW1 = 2 (y + 1) * 2 * (1 - tanh(0.6)^2) * 0.5.
  const double t = std::tanh(0.6), y = 2.0 * t;
  const auto [loss, g1, g2] = specmuon::mlp_eval_grad(m, Matrix{{1.2}}, Matrix{{2.0}});
  EXPECT_NEAR(loss, (y + 1.0) * (y + 1.0), 1e-15);
  EXPECT_NEAR(g2(0, 0), 2.0 * (y + 1.0) * t, 1e-15);
  EXPECT_NEAR(g1(0, 0), 2.0 * (y + 1.0) * 2.0 * (1.0 - t * t) * 0.5, 1e-15);
}

TEST(FiniteDiff, ExactOnScalarQuadratic) {
  const specmuon::QuadraticProblem p({1, 2.0, 2.0, 0, 0});
  const auto g = specmuon::finite_diff_grad(p, std::vector<Matrix>{Matrix{{1.0}}}, 1e-5);
  EXPECT_NEAR(g[0](0, 0), 2.0, 1e-9);
  EXPECT_THROW(specmuon::finite_diff_grad(p, std::vector<Matrix>{Matrix{{1.0}}}, 0.0), specmuon::ArgumentError);
}

TEST(FiniteDiff, GradientGateOnEveryProblem) {
  const specmuon::LeastSquaresProblem ls(specmuon::LeastSquaresSpec{});
  const specmuon::QuadraticProblem quad(specmuon::QuadraticSpec{});
  const specmuon::MlpProblem mlp(specmuon::MlpSpec{});
  for (const specmuon::Problem* p : {static_cast<const specmuon::Problem*>(&ls),
                                     static_cast<const specmuon::Problem*>(&quad),
                                     static_cast<const specmuon::Problem*>(&mlp)}) {
    const auto gate = specmuon::gradient_gate(*p);
    EXPECT_TRUE(gate.passed) << p->name() << " worst relative error " << gate.worst_relative_error;
  }
}

TEST(FiniteDiff, GateCatchesWrongGradient) {
  // A deliberately broken problem: reports twice the true gradient.
  struct Broken final : specmuon::Problem {
    std::string name() const override { return "broken"; }
    std::vector<specmuon::Shape> param_shapes() const override { return {{2, 2}}; }
    std::vector<Matrix> initial_point() const override { return {Matrix(2, 2)}; }
    double loss(std::span<const Matrix> p) const override { return 0.5 * specmuon::frobenius_inner(p[0], p[0]); }
    specmuon::Evaluation evaluate(std::span<const Matrix> p) const override { return {loss(p), {p[0] * 2.0}}; }
  };
  EXPECT_FALSE(specmuon::gradient_gate(Broken{}).passed);
}
