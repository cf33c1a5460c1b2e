#include "dqen/autograd.hpp"
#include "dqen/errors.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

using namespace dqen;
using dqen::testing::gradcheck;
using dqen::testing::random_matrix;

namespace {

constexpr double kTol = 1e-6;

ag::Var rand_param(std::mt19937_64& rng, ag::Index r, ag::Index c, double s = 1.0) {
  return ag::parameter(random_matrix(rng, r, c, s));
}

}  // namespace

TEST(Autograd, MatmulFamilyGradients) {
  std::mt19937_64 rng(1);
  auto a = rand_param(rng, 3, 4), b = rand_param(rng, 4, 2), c = rand_param(rng, 5, 4), bias = rand_param(rng, 1, 2);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::matmul(a, b))); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::matmul_nt(a, c))); }, {a, c}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::linear(a, b, bias))); }, {a, b, bias}), kTol);
}

TEST(Autograd, ElementwiseGradients) {
  std::mt19937_64 rng(2);
  auto a = rand_param(rng, 3, 3), b = rand_param(rng, 3, 3), row = rand_param(rng, 1, 3);
  ag::Matrix pos = random_matrix(rng, 3, 3).cwiseAbs().array() + 0.5;
  auto d = ag::parameter(pos);
  const auto w = ag::constant(random_matrix(rng, 3, 3));
  const auto loss = [&](const ag::Var& v) { return ag::sum_all(ag::mul(v, w)); };
  EXPECT_LT(gradcheck([&] { return loss(ag::add(a, b)); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::sub(a, b)); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::mul(a, b)); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::div(a, d)); }, {a, d}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::add_row(a, row)); }, {a, row}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::mul_row(a, row)); }, {a, row}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::scale(a, -1.7)); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::gelu(a)); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::sigmoid(a)); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return loss(ag::square(a)); }, {a}), kTol);
}

TEST(Autograd, RowwiseAndStructuralGradients) {
  std::mt19937_64 rng(3);
  auto a = rand_param(rng, 4, 5), g = rand_param(rng, 1, 5), be = rand_param(rng, 1, 5), row = rand_param(rng, 1, 5);
  const auto w = ag::constant(random_matrix(rng, 4, 5));
  const std::array<int, 3> rows{2, 0, 2};
  const std::array<int, 4> cols{1, 4, 0, 4};
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::mul(ag::softmax_rows(a), w)); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::mul(ag::layer_norm(a, g, be), w)); }, {a, g, be}), 1e-5);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::gather_rows(a, rows))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::mul(ag::repeat_rows(row, 4), w)); }, {row}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::mean_rows(a))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::slice_cols(a, 1, 3))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::slice_rows(a, 1, 2))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::pick(a, cols))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::concat_cols({a, ag::scale(a, 2.0)}))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(ag::concat_rows({a, w}))); }, {a}), kTol);
  EXPECT_LT(gradcheck([&] { return ag::mean_all(ag::square(ag::mul_col(a, ag::col(a, 0)))); }, {a}), kTol);
}

TEST(Autograd, CrossEntropyMatchesLoopOracle) {
  std::mt19937_64 rng(4);
  auto logits = rand_param(rng, 4, 3);
  const std::array<int, 4> targets{0, 2, 1, 2};
  const std::array<double, 4> weights{1.0, 0.1, 1.0, 0.5};
  const ag::Matrix& x = logits.value();
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 4; ++i) {
    double z = 0.0;
    for (int c = 0; c < 3; ++c) z += std::exp(x(i, c));
    num += weights[static_cast<std::size_t>(i)] * (std::log(z) - x(i, targets[static_cast<std::size_t>(i)]));
    den += weights[static_cast<std::size_t>(i)];
  }
  EXPECT_NEAR(ag::cross_entropy(logits, targets, weights).item(), num / den, 1e-12);
  EXPECT_LT(gradcheck([&] { return ag::cross_entropy(logits, targets, weights); }, {logits}), kTol);
}

TEST(Autograd, FocalLossMatchesLoopOracle) {
  std::mt19937_64 rng(5);
  auto logits = rand_param(rng, 3, 4, 2.0);
  ag::Matrix t = ag::Matrix::Zero(3, 4);
  t(0, 1) = t(2, 3) = t(2, 0) = 1.0;
  const double alpha = 0.25, gamma = 2.0;
  double expect = 0.0;
  for (ag::Index i = 0; i < t.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits.value().data()[i]));
    const double y = t.data()[i];
    const double pt = y > 0 ? p : 1 - p;
    const double at = y > 0 ? alpha : 1 - alpha;
    expect += -at * std::pow(1 - pt, gamma) * std::log(pt);
  }
  EXPECT_NEAR(ag::focal_loss_sum(logits, t, alpha, gamma).item(), expect, 1e-10);
  EXPECT_LT(gradcheck([&] { return ag::focal_loss_sum(logits, t, alpha, gamma); }, {logits}), kTol);
  // alpha < 0 and gamma = 0 is plain binary cross-entropy.
  double bce = 0.0;
  for (ag::Index i = 0; i < t.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits.value().data()[i]));
    bce += t.data()[i] > 0 ? -std::log(p) : -std::log(1 - p);
  }
  EXPECT_NEAR(ag::focal_loss_sum(logits, t, -1.0, 0.0).item(), bce, 1e-10);
}

TEST(Autograd, DetachBlocksGradient) {
  auto a = ag::parameter(ag::Matrix::Constant(2, 2, 3.0));
  ag::backward(ag::sum_all(ag::add(ag::square(ag::detach(a)), a)));
  EXPECT_TRUE((a.grad().array() == 1.0).all());
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto a = ag::parameter(ag::Matrix::Ones(2, 2));
  ag::Var out;
  {
    ag::NoGradGuard g;
    EXPECT_FALSE(ag::grad_enabled());
    out = ag::sum_all(ag::square(a));
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_FALSE(out.requires_grad());
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  auto a = ag::parameter(ag::Matrix::Constant(1, 1, 2.0));
  ag::backward(ag::add(ag::mul(a, a), a));  // d/da (a^2 + a) = 2a + 1
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 5.0);
}

TEST(Autograd, ShapeErrors) {
  auto a = ag::parameter(ag::Matrix::Ones(2, 3));
  auto b = ag::parameter(ag::Matrix::Ones(2, 3));
  EXPECT_THROW((void)ag::matmul(a, b), ShapeError);
  EXPECT_THROW(ag::backward(a), ShapeError);
}
