#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ntta/errors.hpp"
#include "ntta/ops.hpp"
#include "support.hpp"

using namespace ntta;
using ntta::testing::max_grad_error;
using ntta::testing::randn;
using Inputs = std::vector<Tensor<double>>;

namespace {

constexpr double kGradTol = 1e-6;

Tensor<double> positive(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(0.5, 2.0);
  return t;
}

}  // namespace

TEST(Matmul, SmallExample) {
  auto a = Tensor<double>({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, GradOfSumIsRowAndColumnSums) {
  auto a = Tensor<double>({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>({2, 2}, {5, 6, 7, 8});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum(matmul(a, b)));
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{11, 15, 11, 15}));
  EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()), (std::vector<double>{4, 4, 6, 6}));
}

TEST(Matmul, InnerExtentMismatchThrows) {
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
  EXPECT_THROW(matmul(Tensor<double>({2, 2, 3}), Tensor<double>({3, 3, 2})), ShapeError);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  auto a = randn({3, 4, 5}, rng);
  auto b = randn({3, 5, 2}, rng);
  auto c = matmul(a, b);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += a[n * 20 + i * 5 + k] * b[n * 10 + k * 2 + j];
        EXPECT_NEAR(c[n * 8 + i * 2 + j], s, 1e-12);
      }
}

TEST(Broadcast, AddsRowVectorAndRejectsMismatch) {
  auto x = Tensor<double>({2, 3}, {0, 0, 0, 1, 1, 1});
  auto b = Tensor<double>::from({1, 2, 3});
  auto y = add(x, b);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 2, 3, 2, 3, 4}));
  EXPECT_THROW(add(x, Tensor<double>::from({1, 2})), ShapeError);
}

TEST(Elementwise, KnownValues) {
  EXPECT_EQ(gelu(Tensor<double>::from({0.0}))[0], 0.0);
  auto x = Tensor<double>::from({1.0});
  x.set_requires_grad(true);
  backward(sum(exp(x)));
  EXPECT_NEAR(x.grad()[0], std::numbers::e, 1e-12);
  EXPECT_THROW(log(Tensor<double>::from({1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor<double>::from({-1.0})), DomainError);
}

TEST(Softmax, KnownValuesAndShiftInvariance) {
  auto p = softmax(Tensor<double>({1, 3}, {1, 2, 3}), 1);
  EXPECT_NEAR(p[0], 0.090031, 1e-6);
  EXPECT_NEAR(p[1], 0.244728, 1e-6);
  EXPECT_NEAR(p[2], 0.665241, 1e-6);
  auto q = softmax(Tensor<double>({1, 3}, {1001, 1002, 1003}), 1);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(4);
  auto p = softmax(randn({5, 7}, rng, 10.0), 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += p[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Pool, AveragesWindows) {
  auto y = avg_pool1d(Tensor<double>({1, 1, 4}, {1, 2, 3, 4}), 2, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(y[0], 1.5);
  EXPECT_EQ(y[1], 3.5);
  Tensor<double> ramp({1, 1, 8});
  for (std::size_t i = 0; i < 8; ++i) ramp[i] = static_cast<double>(i + 1);
  auto z = avg_pool1d(avg_pool1d(ramp, 2, 2), 2, 2);
  EXPECT_EQ(z[0], 2.5);
  EXPECT_EQ(z[1], 6.5);
}

TEST(Pool, OutputLengthFormula) {
  EXPECT_EQ(avg_pool1d(Tensor<double>({2, 3, 9}), 2, 2).shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(avg_pool1d(Tensor<double>({2, 3, 9}), 3, 1).shape(), (Shape{2, 3, 7}));
  EXPECT_THROW(avg_pool1d(Tensor<double>({1, 1, 1}), 2, 2), ShapeError);
}

TEST(Dropout, KeepsExpectedFractionAndScales) {
  Rng rng(9);
  const std::size_t n = 100000;
  auto y = dropout(Tensor<double>({n}, 1.0), 0.1, true, rng);
  std::size_t kept = 0;
  for (auto v : y.data()) {
    if (v != 0.0) {
      ++kept;
      EXPECT_NEAR(v, 1.0 / 0.9, 1e-12);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / n, 0.9, 0.01);
  auto id = dropout(Tensor<double>({4}, 2.0), 0.5, false, rng);
  for (auto v : id.data()) EXPECT_EQ(v, 2.0);
}

TEST(Reshape, PermuteRoundTrip) {
  Rng rng(2);
  auto x = randn({2, 3, 4}, rng);
  auto y = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
  EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

// ---- central-difference oracle over every op --------------------------------

TEST(Gradients, Matmul) {
  Rng rng(10);
  EXPECT_LT(max_grad_error({randn({3, 4}, rng), randn({4, 2}, rng)},
                           [](const Inputs& v) { return sum(matmul(v[0], v[1])); }),
            kGradTol);
  EXPECT_LT(max_grad_error({randn({2, 3, 4}, rng), randn({2, 5, 4}, rng), randn({2, 3, 5}, rng)},
                           [](const Inputs& v) { return sum(mul(matmul_nt(v[0], v[1]), v[2])); }),
            kGradTol);
}

TEST(Gradients, LinearWithBias) {
  Rng rng(11);
  auto r = randn({2, 3, 5}, rng);
  EXPECT_LT(max_grad_error({randn({2, 3, 4}, rng), randn({5, 4}, rng), randn({5}, rng)},
                           [&](const Inputs& v) { return sum(mul(linear(v[0], v[1], v[2]), r)); }),
            kGradTol);
}

TEST(Gradients, BroadcastBinaryOps) {
  Rng rng(12);
  Inputs in{randn({3, 4}, rng), randn({4}, rng)};
  EXPECT_LT(max_grad_error(in, [](const Inputs& v) { return sum(mul(add(v[0], v[1]), v[0])); }), kGradTol);
  EXPECT_LT(max_grad_error(in, [](const Inputs& v) { return sum(mul(sub(v[0], v[1]), v[1])); }), kGradTol);
  EXPECT_LT(max_grad_error(in, [](const Inputs& v) { return sum(mul(v[0], v[1])); }), kGradTol);
}

TEST(Gradients, Unary) {
  Rng rng(13);
  auto r = randn({3, 4}, rng);
  EXPECT_LT(max_grad_error({randn({3, 4}, rng)}, [&](const Inputs& v) { return sum(mul(exp(v[0]), r)); }),
            kGradTol);
  EXPECT_LT(max_grad_error({positive({3, 4}, rng)}, [&](const Inputs& v) { return sum(mul(log(v[0]), r)); }),
            kGradTol);
  EXPECT_LT(max_grad_error({randn({3, 4}, rng)}, [&](const Inputs& v) { return sum(mul(gelu(v[0]), r)); }),
            kGradTol);
  EXPECT_LT(max_grad_error({randn({3, 4}, rng)}, [&](const Inputs& v) { return sum(mul(scale(v[0], 2.5), r)); }),
            kGradTol);
  EXPECT_LT(max_grad_error({positive({3, 4}, rng)},
                           [&](const Inputs& v) { return sum(mul(clamp_min(v[0], 0.1), r)); }),
            kGradTol);
}

TEST(Gradients, Reductions) {
  Rng rng(14);
  auto r = randn({3, 5}, rng);
  EXPECT_LT(max_grad_error({randn({3, 4, 5}, rng)}, [&](const Inputs& v) { return sum(mul(sum_axis(v[0], 1), r)); }),
            kGradTol);
  EXPECT_LT(
      max_grad_error({randn({3, 4, 5}, rng)}, [&](const Inputs& v) { return sum(mul(mean_axis(v[0], 1), r)); }),
      kGradTol);
  EXPECT_LT(max_grad_error({randn({3, 4}, rng)}, [](const Inputs& v) { return mean(mul(v[0], v[0])); }), kGradTol);
}

TEST(Gradients, SoftmaxFamily) {
  Rng rng(15);
  auto r = randn({3, 6}, rng);
  EXPECT_LT(max_grad_error({randn({3, 6}, rng)}, [&](const Inputs& v) { return sum(mul(softmax(v[0], 1), r)); }),
            kGradTol);
  EXPECT_LT(
      max_grad_error({randn({3, 6}, rng)}, [&](const Inputs& v) { return sum(mul(log_softmax(v[0], 1), r)); }),
      kGradTol);
  auto r0 = randn({3, 6}, rng);
  EXPECT_LT(max_grad_error({randn({3, 6}, rng)}, [&](const Inputs& v) { return sum(mul(softmax(v[0], 0), r0)); }),
            kGradTol);
}

TEST(Gradients, ShapeOps) {
  Rng rng(16);
  auto r = randn({4, 2, 3}, rng);
  EXPECT_LT(max_grad_error({randn({2, 3, 4}, rng)},
                           [&](const Inputs& v) { return sum(mul(permute(v[0], {2, 0, 1}), r)); }),
            kGradTol);
  auto r2 = randn({6, 4}, rng);
  EXPECT_LT(max_grad_error({randn({2, 3, 4}, rng)},
                           [&](const Inputs& v) { return sum(mul(reshape(v[0], {6, 4}), r2)); }),
            kGradTol);
  auto r3 = randn({2, 3, 3}, rng);
  EXPECT_LT(
      max_grad_error({randn({2, 3, 7}, rng)}, [&](const Inputs& v) { return sum(mul(avg_pool1d(v[0], 2, 2), r3)); }),
      kGradTol);
}

TEST(Gradients, Normalization) {
  Rng rng(17);
  auto r = randn({4, 3, 5}, rng);
  EXPECT_LT(max_grad_error({randn({4, 3, 5}, rng), randn({5}, rng), randn({5}, rng)},
                           [&](const Inputs& v) { return sum(mul(layer_norm(v[0], v[1], v[2], 1e-5), r)); }),
            kGradTol);
  EXPECT_LT(max_grad_error({randn({4, 3, 5}, rng), randn({5}, rng), randn({5}, rng)},
                           [&](const Inputs& v) { return sum(mul(batch_norm(v[0], v[1], v[2], 1e-5), r)); }),
            kGradTol);
  auto m = randn({5}, rng);
  auto var = positive({5}, rng);
  EXPECT_LT(max_grad_error({randn({4, 3, 5}, rng), randn({5}, rng), randn({5}, rng)},
                           [&](const Inputs& v) {
                             return sum(mul(batch_norm_fixed(v[0], v[1], v[2], m, var, 1e-5), r));
                           }),
            kGradTol);
}
