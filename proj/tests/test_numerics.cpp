#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "i2v/errors.hpp"
#include "i2v/grad_check.hpp"
#include "i2v/tensor.hpp"

using namespace i2v;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(shape, rng, stddev);
}

// Scalar loss sum(y * r) with fixed random weights, so gradients are not degenerate.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return sum_all(mul(y, random_tensor(y.shape(), seed ^ 0x9e3779b97f4a7c15ULL)));
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE(bitwise_equal(matmul(eye, m), m));
}

TEST(Matmul, HandComputedColumnProduct) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.at({0, 0}), 2.0);
  EXPECT_EQ(c.at({1, 0}), 4.0);
}

TEST(Matmul, GradientOfSumIsRowSumOfRightOperand) {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 5}, 2);
  auto f = [&](const Tensor& x) { return sum_all(matmul(x, b)); };
  auto g = tape_gradient(f, a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double row = 0.0;
      for (std::size_t n = 0; n < 5; ++n) row += b.at({k, n});
      EXPECT_NEAR(g[i * 4 + k], row, 1e-12);
    }
  }
  EXPECT_LT(grad_check(f, a, 1e-5), 1e-6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(Softmax, SymmetricInputIsUniform) {
  Tensor y = softmax_lastdim(Tensor({2}, {0.0, 0.0}));
  EXPECT_EQ(y.at({0}), 0.5);
  EXPECT_EQ(y.at({1}), 0.5);
}

TEST(Softmax, ClosedFormLogThree) {
  Tensor y = softmax_lastdim(Tensor({2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(y.at({0}), 0.25, 1e-15);
  EXPECT_NEAR(y.at({1}), 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsMatchExtendedPrecision) {
  Tensor y = softmax_lastdim(Tensor({2}, {1000.0, 1001.0}));
  // exp(1000) overflows double but not long double on x86-64.
  const long double e0 = std::exp(1000.0L);
  const long double e1 = std::exp(1001.0L);
  EXPECT_TRUE(std::isfinite(y.at({0})) && std::isfinite(y.at({1})));
  EXPECT_NEAR(y.at({0}), static_cast<double>(e0 / (e0 + e1)), 1e-15);
  EXPECT_NEAR(y.at({1}), static_cast<double>(e1 / (e0 + e1)), 1e-15);
  EXPECT_NEAR(y.at({0}) + y.at({1}), 1.0, 1e-9);
}

TEST(Softmax, RowsSumToOneAtLargeMagnitude) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor y = softmax_lastdim(random_tensor({6, 9}, seed, 1e3));
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GE(y.at({r, j}), 0.0);
        total += y.at({r, j});
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, EmptyTensorIsRejected) {
  EXPECT_THROW(Tensor::zeros({3, 0}), DimensionError);
  EXPECT_THROW(softmax_lastdim(Tensor{}), DimensionError);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Tensor x = random_tensor({2, 5, 6}, 3);
  Tensor k = Tensor::zeros({2, 2, 3, 3});
  auto kd = k.mutable_data();
  for (std::size_t c = 0; c < 2; ++c) kd[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
  EXPECT_TRUE(bitwise_equal(conv2d(x, k, 1), x));
}

TEST(Conv2d, NormalizedKernelKeepsConstantInterior) {
  Tensor x = Tensor::full({1, 6, 6}, 0.7);
  Tensor k = random_tensor({1, 1, 3, 3}, 4);
  double total = 0.0;
  for (double v : k.data()) total += v;
  for (auto& v : k.mutable_data()) v /= total;
  Tensor y = conv2d(x, k, 1);
  for (std::size_t i = 1; i < 5; ++i) {
    for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(y.at({0, i, j}), 0.7, 1e-12);
  }
}

TEST(Conv2d, ValidConvolutionIsElementwiseDot) {
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k({1, 1, 3, 3}, {9, 8, 7, 6, 5, 4, 3, 2, 1});
  Tensor y = conv2d(x, k, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y.item(), 1 * 9 + 2 * 8 + 3 * 7 + 4 * 6 + 5 * 5 + 6 * 4 + 7 * 3 + 8 * 2 + 9 * 1);
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor::zeros({3, 4, 4}), Tensor::zeros({2, 2, 3, 3}), 1), DimensionError);
}

TEST(GradCheck, SquaredNormHasClosedFormGradient) {
  Tensor x = random_tensor({4, 3}, 5);
  auto f = [](const Tensor& v) { return sum_all(mul(v, v)); };
  auto g = tape_gradient(f, x);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], 2.0 * x.data()[i], 1e-15);
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-6);
}

TEST(GradCheck, SumOfSoftmaxHasZeroGradient) {
  Tensor x = random_tensor({3, 5}, 6);
  auto f = [](const Tensor& v) { return sum_all(softmax_lastdim(v)); };
  auto g = tape_gradient(f, x);
  for (double v : g) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(GradCheck, NonFiniteFunctionIsNumericError) {
  auto f = [](const Tensor& v) { return scale(sum_all(v), std::numeric_limits<double>::infinity()); };
  EXPECT_THROW(grad_check(f, Tensor::full({2}, 1.0), 1e-5), NumericError);
}

// Every primitive with a backward pass, over 20 seeds.
class PrimitiveGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  const std::uint64_t s = GetParam();
  const double tol = 1e-4;
  Tensor a = random_tensor({3, 4}, s * 31 + 1);
  Tensor b = random_tensor({4, 2}, s * 31 + 2);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, b), s); }, a), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(a, x), s); }, b), tol);

  Tensor ba = random_tensor({2, 3, 4}, s * 31 + 3);
  Tensor bb = random_tensor({2, 4, 3}, s * 31 + 4);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, bb), s); }, ba), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(ba, x), s); }, bb), tol);

  Tensor logits = random_tensor({3, 5}, s * 31 + 5, 2.0);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(softmax_lastdim(x), s); }, logits), tol);

  Tensor img = random_tensor({2, 3, 5, 5}, s * 31 + 6);
  Tensor ker = random_tensor({4, 3, 3, 3}, s * 31 + 7);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(conv2d(x, ker, 1), s); }, img), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(conv2d(img, x, 1), s); }, ker), tol);
  Tensor ker1 = random_tensor({2, 3, 1, 1}, s * 31 + 8);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(conv2d(x, ker1, 0), s); }, img), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(conv2d(img, x, 0), s); }, ker1), tol);

  Tensor p = random_tensor({2, 3, 4}, s * 31 + 9);
  Tensor q = random_tensor({3, 1}, s * 31 + 10);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(add(x, q), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(add(p, x), s); }, q), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(sub(p, x), s); }, q), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(mul(x, q), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(mul(p, x), s); }, q), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(scale(x, -1.7), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(silu(x), s); }, p), tol);

  Tensor gx = random_tensor({2, 4, 3, 3}, s * 31 + 11);
  Tensor gamma = random_tensor({4}, s * 31 + 12);
  Tensor beta = random_tensor({4}, s * 31 + 13);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(group_norm(x, 2, gamma, beta), s); }, gx), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(group_norm(gx, 2, x, beta), s); }, gamma), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(group_norm(gx, 2, gamma, x), s); }, beta), tol);

  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(reshape(x, {4, 6}), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(permute(x, {2, 0, 1}), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(slice(x, 1, 1, 3), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(concat({p, x, p}, 2), s); }, p), tol);
  EXPECT_LT(grad_check([&](const Tensor& x) { return sum_all(x); }, p), tol);
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, PrimitiveGradients, ::testing::Range<std::uint64_t>(0, 20));

TEST(Tape, BackwardIsBitwiseDeterministic) {
  auto run = [] {
    Tensor w = random_tensor({4, 3, 3, 3}, 77);
    w.set_requires_grad(true);
    Tensor x = random_tensor({2, 3, 6, 6}, 78);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      Tensor h = silu(conv2d(x, w, 1));
      loss = weighted_sum(softmax_lastdim(h), 5);
    }
    tape.backward(loss);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, NoGradientReachesTensorsThatDoNotRequireIt) {
  Tensor frozen = random_tensor({3, 3}, 1);
  Tensor live = random_tensor({3, 3}, 2);
  live.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(matmul(matmul(live, frozen), frozen));
  }
  tape.backward(loss);
  EXPECT_TRUE(live.has_grad());
  EXPECT_FALSE(frozen.has_grad());
}

TEST(Tape, NothingIsRecordedOutsideAScope) {
  Tensor w = random_tensor({2, 2}, 3);
  w.set_requires_grad(true);
  Tape tape;
  Tensor y = matmul(w, w);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}
