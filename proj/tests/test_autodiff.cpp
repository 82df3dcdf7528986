#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "advmil/autodiff.hpp"
#include "advmil/nn.hpp"

using namespace advmil;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Scalar function of one matrix input, built on a fresh tape.
using Fn = std::function<ad::Var(ad::Tape&, ad::Var)>;

double eval(const Fn& f, const Matrix& x) {
  ad::Tape tape;
  return f(tape, tape.constant(x)).scalar();
}

void expect_gradient_matches(const Fn& f, const Matrix& x, double tol = 1e-6) {
  ad::Tape tape;
  ad::Var in = tape.variable(x);
  ad::Var out = f(tape, in);
  tape.backward(out);
  const Matrix g = tape.grad(in);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (eval(f, xp) - eval(f, xm)) / (2 * h);
    EXPECT_NEAR(g.data()[i], fd, tol * std::max(1.0, std::fabs(fd))) << "entry " << i;
  }
}

// Reduces any matrix to a scalar with fixed random weights, so every entry's
// gradient is exercised.
ad::Var weighted_sum(ad::Tape& t, ad::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Matrix w = random_matrix(x.cols(), 1, rng);
  Matrix ones = Matrix::Constant(1, x.rows(), 1.0);
  return ad::matmul(ad::matmul(t.constant(ones), x), t.constant(w));
}

}  // namespace

TEST(Autodiff, MatmulBothSides) {
  std::mt19937_64 rng(1);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix a = random_matrix(2, 4, rng);
  expect_gradient_matches([&](ad::Tape& t, ad::Var x) { return weighted_sum(t, ad::matmul(x, t.constant(b))); },
                          random_matrix(2, 4, rng));
  expect_gradient_matches([&](ad::Tape& t, ad::Var x) { return weighted_sum(t, ad::matmul(t.constant(a), x)); },
                          random_matrix(4, 3, rng));
}

TEST(Autodiff, ElementwiseOps) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix other = random_matrix(3, 5, rng);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::tanh(v)); }, x);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::sigmoid(v)); }, x);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::relu(v)); }, x);
  expect_gradient_matches([&](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::hadamard(v, t.constant(other))); }, x);
  expect_gradient_matches([&](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::hadamard(v, v)); }, x);
  expect_gradient_matches([&](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::sub(t.constant(other), v)); }, x);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::scale(v, -2.5)); }, x);
}

TEST(Autodiff, ShapeOps) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(4, 3, rng);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::transpose(v)); }, x);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::mean_rows(v)); }, x);
  expect_gradient_matches([](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::softmax_rows(v)); }, x);
  const Matrix row = random_matrix(1, 3, rng);
  expect_gradient_matches([&](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::add_row(v, t.constant(row))); }, x);
  expect_gradient_matches([&](ad::Tape& t, ad::Var v) { return weighted_sum(t, ad::add_row(t.constant(x), v)); }, row);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(4);
  ad::Tape t;
  const Matrix s = ad::softmax_rows(t.constant(random_matrix(3, 6, rng, 20.0))).value();
  for (Eigen::Index r = 0; r < s.rows(); ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
  EXPECT_TRUE(s.allFinite());
}

TEST(Autodiff, SigmoidIsStableAtExtremes) {
  EXPECT_EQ(ad::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(ad::sigmoid(1000.0), 1.0);
  EXPECT_NEAR(ad::sigmoid(0.0), 0.5, 1e-15);
}

TEST(Autodiff, ReusedNodeAccumulates) {
  // f(x) = sum(x ⊙ x) + sum(x) has gradient 2x + 1.
  ad::Tape t;
  Matrix x(1, 3);
  x << 1.0, -2.0, 0.5;
  ad::Var v = t.variable(x);
  ad::Var ones = t.constant(Matrix::Ones(3, 1));
  ad::Var f = ad::add(ad::matmul(ad::hadamard(v, v), ones), ad::matmul(v, ones));
  t.backward(f);
  const Matrix g = t.grad(v);
  EXPECT_NEAR(g(0, 0), 3.0, 1e-15);
  EXPECT_NEAR(g(0, 1), -3.0, 1e-15);
  EXPECT_NEAR(g(0, 2), 2.0, 1e-15);
}

TEST(Autodiff, MultipleSeedsAreWeighted) {
  ad::Tape t;
  ad::Var x = t.variable(Matrix::Constant(1, 1, 2.0));
  ad::Var a = ad::scale(x, 3.0);
  ad::Var b = ad::hadamard(x, x);
  t.backward({{a, 0.5}, {b, -1.0}});
  EXPECT_NEAR(t.grad(x)(0, 0), 0.5 * 3.0 - 1.0 * 4.0, 1e-15);
}

TEST(Autodiff, BackwardRejectsNonScalarSeed) {
  ad::Tape t;
  ad::Var x = t.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Autodiff, ParametersAccumulateOnlyWhenCollected) {
  std::mt19937_64 rng(5);
  Linear layer("l", 3, 2, rng);
  const Matrix x = random_matrix(4, 3, rng);
  {
    ad::Tape t;
    t.backward(weighted_sum(t, layer.forward(t, t.constant(x), false)));
  }
  EXPECT_EQ(layer.weight().grad.norm(), 0.0);
  {
    ad::Tape t;
    t.backward(weighted_sum(t, layer.forward(t, t.constant(x), true)));
  }
  const Matrix g1 = layer.weight().grad;
  EXPECT_GT(g1.norm(), 0.0);
  {
    ad::Tape t;
    t.backward(weighted_sum(t, layer.forward(t, t.constant(x), true)));
  }
  EXPECT_NEAR((layer.weight().grad - 2.0 * g1).norm(), 0.0, 1e-12);
}

TEST(Autodiff, GradientFlowsThroughFrozenParameters) {
  std::mt19937_64 rng(6);
  Linear layer("l", 3, 1, rng);
  ad::Tape t;
  ad::Var x = t.variable(random_matrix(1, 3, rng));
  ad::Var y = layer.forward(t, x, false);
  t.backward(y);
  EXPECT_NEAR((t.grad(x) - layer.weight().value.transpose()).norm(), 0.0, 1e-15);
  EXPECT_EQ(layer.weight().grad.norm(), 0.0);
}

TEST(Linear, InitBoundsAndApply) {
  std::mt19937_64 rng(7);
  Linear layer("l", 16, 8, rng);
  const double bound = 1.0 / 4.0;
  EXPECT_LE(layer.weight().value.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(layer.bias().value.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(layer.param_count(), 16 * 8 + 8);
  const Matrix x = random_matrix(5, 16, rng);
  ad::Tape t;
  EXPECT_NEAR((layer.forward(t, t.constant(x), false).value() - layer.apply(x)).norm(), 0.0, 1e-12);
}

TEST(GatedAttention, WeightsAreAConvexCombination) {
  std::mt19937_64 rng(8);
  GatedAttention pool("p", 6, 4, rng);
  const Matrix h = random_matrix(5, 6, rng);
  ad::Tape t;
  Matrix w;
  const Matrix out = pool.forward(t, t.constant(h), false, &w).value();
  EXPECT_EQ(w.rows(), 1);
  EXPECT_EQ(w.cols(), 5);
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
  EXPECT_GE(w.minCoeff(), 0.0);
  EXPECT_NEAR((out - w * h).norm(), 0.0, 1e-12);
  EXPECT_EQ(pool.param_count(), 2 * (6 * 4 + 4) + 4 + 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first Adam step is lr·g/(|g| + eps) per entry.
  Parameter p("p", Matrix::Constant(1, 2, 1.0));
  p.grad << 0.5, -2.0;
  Adam opt({&p}, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value(0, 1), 1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_EQ(p.grad.norm(), 0.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MatchesHandRolledRecurrenceWithWeightDecay) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.05, scale = 0.25;
  Parameter p("p", Matrix::Constant(1, 1, 0.7));
  Adam opt({&p}, AdamOptions{lr, b1, b2, eps, wd});
  double x = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    const double raw = 0.3 * t - 0.4;
    p.grad(0, 0) = raw;
    opt.step(scale);
    const double g = raw * scale + wd * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p.value(0, 0), x, 1e-14);
  }
}

TEST(HashParameters, DetectsAnyChange) {
  Parameter a("a", Matrix::Zero(2, 2)), b("b", Matrix::Ones(1, 3));
  const auto h0 = hash_parameters({&a, &b});
  EXPECT_EQ(h0, hash_parameters({&a, &b}));
  b.value(0, 2) = std::nextafter(1.0, 2.0);
  EXPECT_NE(h0, hash_parameters({&a, &b}));
}
