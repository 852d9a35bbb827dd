#include <gtest/gtest.h>

#include <thread>

#include "ntta/errors.hpp"
#include "ntta/ops.hpp"
#include "support.hpp"

using namespace ntta;

TEST(Tensor, ShapeMatchesData) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(numel_of(t.shape()), t.numel());
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, CloneIsDeepAssignCopiesValues) {
  auto a = Tensor<float>::from({1, 2, 3});
  auto b = a.clone();
  b[0] = 9;
  EXPECT_EQ(a[0], 1);
  a.assign(b);
  EXPECT_EQ(a[0], 9);
  EXPECT_THROW(a.assign(Tensor<float>({2})), ShapeError);
}

TEST(Tape, SumGivesOnes) {
  Tensor<double> x({2, 3}, 0.5);
  x.set_requires_grad(true);
  backward(sum(x));
  ASSERT_TRUE(x.has_grad());
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_EQ(GradTape<double>::current().size(), 0u);
}

TEST(Tape, SquareGivesTwoX) {
  auto x = Tensor<double>::from({1, 2});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Tape, GradientsAccumulateAcrossBackwardCalls) {
  auto x = Tensor<double>::from({3});
  x.set_requires_grad(true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 5.0)));
  EXPECT_EQ(x.grad()[0], 7.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tape, ReusedTensorAccumulates) {
  auto x = Tensor<double>::from({1.5});
  x.set_requires_grad(true);
  auto y = add(x, x);
  backward(sum(mul(y, x)));  // 2x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tape, ReplaysInReverseOrder) {
  // Each closure consumes its output's gradient, so a wrong order loses it.
  auto x = Tensor<double>::from({2});
  x.set_requires_grad(true);
  auto y = exp(scale(mul(x, x), 0.5));
  backward(sum(y));
  EXPECT_NEAR(x.grad()[0], 2.0 * std::exp(2.0), 1e-12);
}

TEST(Tape, ConsumedExactlyOnce) {
  auto x = Tensor<double>::from({1, 2});
  x.set_requires_grad(true);
  auto loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Tape, NonScalarLossIsContractError) {
  auto x = Tensor<double>::from({1, 2});
  x.set_requires_grad(true);
  auto y = scale(x, 2.0);
  EXPECT_THROW(backward(y), ContractError);
  GradTape<double>::current().clear();
}

TEST(Tape, NonParticipatingLeafHasNoGradient) {
  auto x = Tensor<double>::from({1, 2});
  auto unused = Tensor<double>::from({3, 4});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  backward(sum(x));
  EXPECT_FALSE(unused.has_grad());
}

TEST(Tape, NoGradGuardRecordsNothing) {
  auto x = Tensor<double>::from({1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    auto y = sum(mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_EQ(GradTape<double>::current().size(), 0u);
}

TEST(Tape, ConfinedToThread) {
  auto x = Tensor<double>::from({1});
  x.set_requires_grad(true);
  auto y = scale(x, 3.0);
  std::size_t other = 99;
  std::thread t([&] { other = GradTape<double>::current().size(); });
  t.join();
  EXPECT_EQ(other, 0u);
  EXPECT_GT(GradTape<double>::current().size(), 0u);
  GradTape<double>::current().clear();
}

TEST(Tape, DeterministicGradients) {
  Rng r1(5), r2(5);
  auto a = ntta::testing::randn({4, 6}, r1);
  auto b = ntta::testing::randn({4, 6}, r2);
  auto run = [](Tensor<double> x) {
    x.set_requires_grad(true);
    backward(sum(gelu(softmax(x, 1))));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(a), run(b));
}

TEST(Cast, RoundTripsThroughDouble) {
  auto f = Tensor<float>::from({0.1f, -2.5f});
  auto back = cast<float>(cast<double>(f));
  EXPECT_EQ(back[0], f[0]);
  EXPECT_EQ(back[1], f[1]);
}
