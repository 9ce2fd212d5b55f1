#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "i2v/attention.hpp"
#include "i2v/errors.hpp"
#include "i2v/grad_check.hpp"

using namespace i2v;
using namespace i2v::attention;

namespace {

Tensor randn(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(shape, rng, stddev);
}

SelfAttentionParams random_self(std::size_t d, std::uint64_t seed) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {randn({d, d}, seed, s), randn({d, d}, seed + 1, s), randn({d, d}, seed + 2, s),
          randn({d, d}, seed + 3, s)};
}

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Straightforward loop implementation of softmax(q k^T / sqrt(d)) v.
Mat naive_attention(const Mat& q, const Mat& k, const Mat& v) {
  const double d = static_cast<double>(q[0].size());
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> w(k.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) s += q[i][c] * k[j][c];
      w[j] = s / std::sqrt(d);
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += w[j] / z * v[j][c];
  }
  return out;
}

void expect_mat_near(const Tensor& t, const Mat& m, double tol) {
  ASSERT_EQ(t.rank(), 2u);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) EXPECT_NEAR(t.at({i, j}), m[i][j], tol) << i << "," << j;
}

TemporalAttentionParams random_temporal(std::size_t d, std::uint64_t seed, bool positions) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  TemporalAttentionParams p;
  p.w_q = randn({d, d}, seed, s);
  p.w_k = randn({d, d}, seed + 1, s);
  p.w_v = randn({d, d}, seed + 2, s);
  p.w_o = randn({d, d}, seed + 3, s);
  p.norm_gamma = Tensor::full({d}, 1.0);
  p.norm_beta = Tensor::zeros({d});
  p.positions = sinusoidal_table(16, d);
  p.groups = 2;
  p.use_positional_encoding = positions;
  return p;
}

}  // namespace

TEST(SelfAttention, SingleTokenReturnsItsValue) {
  auto sa = random_self(4, 10);
  Tensor x = randn({1, 4}, 11);
  EXPECT_LT(max_abs_diff(self_attention(x, sa), matmul(x, sa.w_v)), 1e-15);
}

TEST(SelfAttention, ZeroKeysGiveColumnMeanOfValues) {
  auto sa = random_self(3, 12);
  sa.w_k = Tensor::zeros({3, 3});
  Tensor x = randn({5, 3}, 13);
  Tensor v = matmul(x, sa.w_v);
  Tensor y = self_attention(x, sa);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 5; ++t) mean += v.at({t, c}) / 5.0;
    for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(y.at({t, c}), mean, 1e-14);
  }
}

TEST(SelfAttention, TwoTokenHandComputation) {
  SelfAttentionParams sa{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {1, 0, 0, 1}),
                         Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {1, 0, 0, 1})};
  Tensor x({2, 2}, {1, 0, 0, 1});
  // Scores are I / sqrt(2); each row puts weight p on its own token.
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double p = e / (e + 1.0);
  expect_mat_near(self_attention(x, sa), {{3 - 2 * p, 4 - 2 * p}, {1 + 2 * p, 2 + 2 * p}}, 1e-9);
}

TEST(SelfAttention, WidthMismatch) {
  auto sa = random_self(4, 14);
  EXPECT_THROW(self_attention(Tensor::zeros({3, 5}), sa), DimensionError);
}

TEST(CrossAttention, SingleConditionTokenBroadcastsItsValue) {
  CrossAttentionParams p{randn({4, 4}, 20), randn({3, 4}, 21), randn({3, 4}, 22)};
  Tensor cond = randn({1, 3}, 23);
  Tensor y = cross_attention(randn({6, 4}, 24), cond, p);
  Tensor v = matmul(cond, p.wc_v);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at({t, c}), v.at({0, c}), 1e-15);
}

TEST(CrossAttention, ZeroConditionGivesZero) {
  CrossAttentionParams p{randn({4, 4}, 25), randn({3, 4}, 26), randn({3, 4}, 27)};
  Tensor y = cross_attention(randn({6, 4}, 28), Tensor::zeros({5, 3}), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(CrossAttention, TwoByTwoHandComputation) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  CrossAttentionParams p{eye, eye, eye};
  Tensor x({2, 2}, {1, 0, 0, 1});
  Tensor cond({2, 2}, {1, 0, 0, 2});
  const double a = std::exp(1.0 / std::sqrt(2.0));
  const double pr = a / (a + 1.0);
  const double b = std::exp(2.0 / std::sqrt(2.0));
  const double r = b / (b + 1.0);
  expect_mat_near(cross_attention(x, cond, p), {{pr, 2 * (1 - pr)}, {1 - r, 2 * r}}, 1e-9);
}

TEST(CrossAttention, WidthMismatch) {
  CrossAttentionParams p{randn({4, 4}, 29), randn({3, 4}, 30), randn({3, 4}, 31)};
  EXPECT_THROW(cross_attention(randn({2, 4}, 32), randn({2, 5}, 33), p), DimensionError);
  EXPECT_THROW(cross_attention(randn({2, 3}, 32), randn({2, 3}, 33), p), DimensionError);
}

TEST(AdapterAttention, AtInitializationFrameOneMatchesSelfAttention) {
  auto sa = random_self(8, 40);
  auto ad = init_adapter(sa);
  Tensor x1 = randn({6, 8}, 41);
  EXPECT_TRUE(bitwise_equal(adapter_attention(x1, x1, sa, ad), self_attention(x1, sa)));
}

TEST(AdapterAttention, ZeroReferenceFrameGivesZero) {
  auto sa = random_self(4, 42);
  auto ad = init_adapter(sa);
  Tensor y = adapter_attention(randn({5, 4}, 43), Tensor::zeros({5, 4}), sa, ad);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(AdapterAttention, RandomCaseMatchesLoopOracle) {
  auto sa = random_self(3, 44);
  AdapterParams ad{randn({3, 3}, 45), randn({3, 3}, 46)};
  Tensor xi = randn({2, 3}, 47);
  Tensor x1 = randn({2, 3}, 48);
  Mat expect = naive_attention(mm(to_mat(xi), to_mat(ad.wp_q)), mm(to_mat(x1), to_mat(sa.w_k)),
                               mm(to_mat(x1), to_mat(sa.w_v)));
  expect_mat_near(adapter_attention(xi, x1, sa, ad), expect, 1e-9);
}

TEST(AdapterAttention, ShapeMismatch) {
  auto sa = random_self(4, 49);
  auto ad = init_adapter(sa);
  EXPECT_THROW(adapter_attention(randn({3, 4}, 1), randn({2, 4}, 2), sa, ad), DimensionError);
}

TEST(FusedBlock, ZeroOutputProjectionReproducesBaseLayer) {
  auto sa = random_self(8, 50);
  auto ad = init_adapter(sa);
  Tensor xi = randn({6, 8}, 51);
  Tensor x1 = randn({6, 8}, 52);
  EXPECT_TRUE(bitwise_equal(fused_block_output(xi, x1, sa, ad), matmul(self_attention(xi, sa), sa.w_o)));
}

TEST(FusedBlock, EqualBranchesDoubleTheOutput) {
  auto sa = random_self(4, 53);
  AdapterParams ad{sa.w_q.clone(), sa.w_o.clone()};
  Tensor x = randn({5, 4}, 54);
  Tensor expect = scale(matmul(self_attention(x, sa), sa.w_o), 2.0);
  EXPECT_LT(max_abs_diff(fused_block_output(x, x, sa, ad), expect), 1e-14);
}

TEST(FusedBlock, EqualsSumOfBranches) {
  auto sa = random_self(5, 55);
  AdapterParams ad{randn({5, 5}, 56), randn({5, 5}, 57)};
  Tensor xi = randn({4, 5}, 58);
  Tensor x1 = randn({4, 5}, 59);
  Mat base = mm(naive_attention(mm(to_mat(xi), to_mat(sa.w_q)), mm(to_mat(xi), to_mat(sa.w_k)),
                                mm(to_mat(xi), to_mat(sa.w_v))),
                to_mat(sa.w_o));
  Mat cross = mm(to_mat(adapter_attention(xi, x1, sa, ad)), to_mat(ad.wp_o));
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::size_t j = 0; j < base[i].size(); ++j) base[i][j] += cross[i][j];
  expect_mat_near(fused_block_output(xi, x1, sa, ad), base, 1e-12);
}

TEST(VideoSelfAttention, MatchesPerFrameFusedOutput) {
  auto sa = random_self(4, 60);
  AdapterParams ad{randn({4, 4}, 61, 0.5), randn({4, 4}, 62, 0.5)};
  Tensor x = randn({2, 3, 5, 4}, 63);
  Tensor y = video_self_attention(x, sa, ad);
  for (std::size_t c = 0; c < 2; ++c) {
    Tensor clip = reshape(slice(x, 0, c, c + 1), {3, 5, 4});
    Tensor x1 = reshape(slice(clip, 0, 0, 1), {5, 4});
    for (std::size_t f = 0; f < 3; ++f) {
      Tensor xi = reshape(slice(clip, 0, f, f + 1), {5, 4});
      Tensor got = reshape(slice(slice(y, 0, c, c + 1), 1, f, f + 1), {5, 4});
      EXPECT_LT(max_abs_diff(got, fused_block_output(xi, x1, sa, ad)), 1e-12);
    }
  }
}

TEST(VideoSelfAttention, ZeroAdapterOutputIsBitwiseTransparent) {
  auto sa = random_self(8, 64);
  Tensor x = randn({2, 4, 6, 8}, 65);
  EXPECT_TRUE(bitwise_equal(video_self_attention(x, sa, init_adapter(sa)), video_self_attention(x, sa, std::nullopt)));
}

TEST(AttentionRows, EverySoftmaxRowSumsToOne) {
  // A constant feature routed through a selector value projection exposes the
  // attention row sums in the last output column.
  const std::size_t d = 4;
  Tensor x = randn({6, d}, 70, 3.0);
  auto xd = x.mutable_data();
  for (std::size_t t = 0; t < 6; ++t) xd[t * d + d - 1] = 1.0;
  Tensor selector = Tensor::zeros({d, d});
  selector.mutable_data()[d * d - 1] = 1.0;
  auto sa = random_self(d, 71);
  sa.w_v = selector;
  AdapterParams ad{randn({d, d}, 72, 2.0), Tensor::zeros({d, d})};
  CrossAttentionParams cp{randn({d, d}, 73), randn({d, d}, 74), selector};
  Tensor x1 = x.clone();
  auto check_last_column = [&](const Tensor& y) {
    for (std::size_t t = 0; t < y.dim(0); ++t) EXPECT_NEAR(y.at({t, d - 1}), 1.0, 1e-9);
  };
  check_last_column(self_attention(x, sa));
  check_last_column(adapter_attention(randn({6, d}, 75, 3.0), x1, sa, ad));
  check_last_column(cross_attention(randn({6, d}, 76, 3.0), x, cp));
}

TEST(TemporalAttention, SingleFrameAddsItsOwnValue) {
  auto p = random_temporal(4, 80, true);
  Tensor x = randn({1, 3, 4}, 81);
  Tensor normed = group_norm_tokens(x, p.groups, p.norm_gamma, p.norm_beta);
  Tensor expect = add(x, matmul(matmul(add(normed, slice(p.positions, 0, 0, 1)), p.w_v), p.w_o));
  EXPECT_LT(max_abs_diff(temporal_attention(x, p), expect), 1e-14);
}

TEST(TemporalAttention, IdenticalFramesWithoutPositionsStayIdentical) {
  auto p = random_temporal(4, 82, false);
  Tensor frame = randn({1, 5, 4}, 83);
  Tensor y = temporal_attention(concat({frame, frame, frame}, 0), p);
  EXPECT_TRUE(bitwise_equal(slice(y, 0, 0, 1), slice(y, 0, 1, 2)));
  EXPECT_TRUE(bitwise_equal(slice(y, 0, 0, 1), slice(y, 0, 2, 3)));
}

TEST(TemporalAttention, PositionsBreakFrameSymmetry) {
  auto p = random_temporal(4, 84, true);
  Tensor frame = randn({1, 5, 4}, 85);
  Tensor y = temporal_attention(concat({frame, frame, frame}, 0), p);
  EXPECT_GT(max_abs_diff(slice(y, 0, 0, 1), slice(y, 0, 1, 2)), 1e-6);
  EXPECT_GT(max_abs_diff(slice(y, 0, 1, 2), slice(y, 0, 2, 3)), 1e-6);
}

TEST(TemporalAttention, TooManyFramesIsConfigError) {
  auto p = random_temporal(4, 86, true);
  EXPECT_THROW(temporal_attention(Tensor::zeros({17, 2, 4}), p), ConfigError);
}

TEST(InitAdapter, CopiesQueryAndZerosOutput) {
  auto sa = random_self(6, 90);
  auto ad = init_adapter(sa);
  EXPECT_EQ(max_abs_diff(ad.wp_q, sa.w_q), 0.0);
  for (double v : ad.wp_o.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(ad.wp_q.requires_grad());
  EXPECT_TRUE(ad.wp_o.requires_grad());
  EXPECT_NE(ad.wp_q.impl(), sa.w_q.impl());
}

TEST(InitAdapter, OneGradientStepMovesOutputProjection) {
  auto sa = random_self(4, 91);
  auto ad = init_adapter(sa);
  Tensor xi = randn({3, 4}, 92);
  Tensor x1 = randn({3, 4}, 93);
  Tensor target = randn({3, 4}, 94);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    Tensor diff = sub(fused_block_output(xi, x1, sa, ad), target);
    loss = sum_all(mul(diff, diff));
  }
  ASSERT_GT(loss.item(), 0.0);
  tape.backward(loss);
  auto wo = ad.wp_o.mutable_data();
  auto g = ad.wp_o.grad();
  for (std::size_t i = 0; i < wo.size(); ++i) wo[i] -= 1e-2 * g[i];
  EXPECT_GT(max_abs_diff(ad.wp_o, Tensor::zeros({4, 4})), 0.0);
  // The frozen projections never received a gradient buffer.
  EXPECT_FALSE(sa.w_q.has_grad());
  EXPECT_FALSE(sa.w_k.has_grad());
  EXPECT_FALSE(sa.w_v.has_grad());
  EXPECT_FALSE(sa.w_o.has_grad());
}

TEST(Gradients, SumOfSelfAttentionMatchesFiniteDifferences) {
  auto sa = random_self(4, 100);
  Tensor x = randn({2, 4}, 101);
  EXPECT_LT(grad_check([&](const Tensor& v) { return sum_all(self_attention(v, sa)); }, x, 1e-5), 1e-4);
}

class AdapterGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(AdapterGradients, FusedBlockWrtAdapterWeights) {
  const std::uint64_t s = GetParam() * 17 + 200;
  auto sa = random_self(4, s);
  AdapterParams ad{randn({4, 4}, s + 10, 0.5), randn({4, 4}, s + 11, 0.5)};
  Tensor xi = randn({3, 4}, s + 12);
  Tensor x1 = randn({3, 4}, s + 13);
  Tensor weights = randn({3, 4}, s + 14);
  auto fq = [&](const Tensor& wq) {
    return sum_all(mul(fused_block_output(xi, x1, sa, AdapterParams{wq, ad.wp_o}), weights));
  };
  auto fo = [&](const Tensor& wo) {
    return sum_all(mul(fused_block_output(xi, x1, sa, AdapterParams{ad.wp_q, wo}), weights));
  };
  EXPECT_LT(grad_check(fq, ad.wp_q, 1e-5), 1e-4);
  EXPECT_LT(grad_check(fo, ad.wp_o, 1e-5), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, AdapterGradients, ::testing::Range<std::uint64_t>(0, 20));

TEST(Gradients, TemporalAttentionInput) {
  auto p = random_temporal(4, 300, true);
  Tensor x = randn({3, 2, 4}, 301);
  Tensor weights = randn({3, 2, 4}, 302);
  EXPECT_LT(grad_check([&](const Tensor& v) { return sum_all(mul(temporal_attention(v, p), weights)); }, x), 1e-4);
}
