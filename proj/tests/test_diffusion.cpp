#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "i2v/diffusion.hpp"
#include "i2v/errors.hpp"

using namespace i2v;
using namespace i2v::diffusion;

namespace {

Tensor randn(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(shape, rng);
}

double variance(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return var / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST(Schedule, CleanEndpoint) {
  const auto s = make_vp_schedule(1000);
  EXPECT_EQ(s.alpha[0], 1.0);
  EXPECT_EQ(s.sigma[0], 0.0);
}

TEST(Schedule, VariancePreservingAtEveryStep) {
  for (int steps : {1, 10, 1000}) {
    const auto s = make_vp_schedule(steps);
    ASSERT_EQ(s.alpha.size(), static_cast<std::size_t>(steps + 1));
    for (int t = 0; t <= steps; ++t) {
      EXPECT_NEAR(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t], 1.0, 1e-12) << "t=" << t;
    }
  }
}

TEST(Schedule, AlphaDecreasesToNearZero) {
  const auto s = make_vp_schedule(1000);
  // abar reaches its 1e-5 floor at t = 998 for T = 1000; the schedule is
  // strictly decreasing before that and flat on the floor.
  const double floor_alpha = std::sqrt(1e-5);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_LE(s.alpha[t], s.alpha[t - 1]);
    if (s.alpha[t] > floor_alpha) {
      EXPECT_LT(s.alpha[t], s.alpha[t - 1]) << "t=" << t;
    }
  }
  EXPECT_LT(s.alpha[997], s.alpha[996]);
  EXPECT_GT(s.alpha[997], floor_alpha);
  EXPECT_LT(s.alpha[1000], 0.05);
}

TEST(Schedule, ZeroStepsIsConfigError) { EXPECT_THROW(make_vp_schedule(0), ConfigError); }

TEST(ForwardDiffuse, StepZeroReturnsCleanData) {
  const auto s = make_vp_schedule(100);
  Tensor x0 = randn({2, 3, 4}, 1);
  EXPECT_TRUE(bitwise_equal(forward_diffuse(x0, 0, randn({2, 3, 4}, 2), s), x0));
}

TEST(ForwardDiffuse, ZeroNoiseScalesSignal) {
  const auto s = make_vp_schedule(100);
  Tensor x0 = randn({5, 5}, 3);
  Tensor y = forward_diffuse(x0, 37, Tensor::zeros({5, 5}), s);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], s.alpha[37] * x0.data()[i]);
}

TEST(ForwardDiffuse, NoiseVarianceMatchesSigmaSquared) {
  const auto s = make_vp_schedule(1000);
  const int t = 400;
  Tensor y = forward_diffuse(Tensor::zeros({10000}), t, randn({10000}, 4), s);
  const double expected = s.sigma[t] * s.sigma[t];
  EXPECT_NEAR(variance(y.data()), expected, 0.05 * expected);
}

TEST(ForwardDiffuse, ShapeMismatch) {
  const auto s = make_vp_schedule(10);
  EXPECT_THROW(forward_diffuse(Tensor::zeros({2, 2}), 1, Tensor::zeros({4}), s), DimensionError);
}

TEST(EpsilonLoss, PerfectPredictionIsZero) {
  Tensor e = randn({2, 4, 3}, 5);
  EXPECT_EQ(epsilon_loss(e, e, {true, true, true, true}).item(), 0.0);
}

TEST(EpsilonLoss, MaskedFirstFrameIsIgnored) {
  Tensor truth = randn({1, 3, 6}, 6);
  Tensor pred = truth.clone();
  for (std::size_t i = 0; i < 6; ++i) pred.mutable_data()[i] += 10.0;
  EXPECT_EQ(epsilon_loss(pred, truth, {false, true, true}).item(), 0.0);
}

TEST(EpsilonLoss, ConstantOffsetGivesSquaredOffset) {
  const double c = 0.37;
  Tensor truth = randn({2, 4, 5}, 7);
  Tensor pred = truth.clone();
  for (auto& v : pred.mutable_data()) v += c;
  EXPECT_NEAR(epsilon_loss(pred, truth, {false, true, true, true}).item(), c * c, 1e-14);
}

TEST(EpsilonLoss, AllFramesMaskedIsConfigError) {
  Tensor e = randn({1, 2, 3}, 8);
  EXPECT_THROW(epsilon_loss(e, e, {false, false}), ConfigError);
  EXPECT_THROW(epsilon_loss(e, e, {true}), DimensionError);
}

TEST(DenoisingStep, DeterministicStepWithTrueNoiseLandsOnPreviousLevel) {
  const auto s = make_vp_schedule(1000);
  Tensor x0 = randn({3, 8, 8}, 9);
  Tensor eps = randn({3, 8, 8}, 10);
  for (int t : {1, 2, 50, 500, 997}) {
    Tensor xt = forward_diffuse(x0, t, eps, s);
    Tensor prev = denoising_step(xt, eps, t, s, SamplerMode::kDeterministic);
    Tensor expect = forward_diffuse(x0, t - 1, eps, s);
    EXPECT_LT(max_abs_diff(prev, expect), 1e-9) << "t=" << t;
  }
}

TEST(DenoisingStep, FirstStepRecoversCleanData) {
  const auto s = make_vp_schedule(1000);
  Tensor x0 = randn({16}, 11);
  Tensor eps = randn({16}, 12);
  Tensor out = denoising_step(forward_diffuse(x0, 1, eps, s), eps, 1, s, SamplerMode::kDeterministic);
  EXPECT_LT(max_abs_diff(out, x0), 1e-9);
}

TEST(DenoisingStep, AncestralMarginalVarianceMatchesPreviousLevel) {
  // x0 = 0 and the predicted noise equals the (unit normal) noise in x_t, so
  // the output is sqrt(sigma^2 - eta^2) eps + eta z with total variance sigma[t-1]^2.
  const auto s = make_vp_schedule(1000);
  const int t = 300;
  Tensor eps = randn({10000}, 13);
  Tensor xt = forward_diffuse(Tensor::zeros({10000}), t, eps, s);
  Tensor out = denoising_step(xt, eps, t, s, SamplerMode::kAncestral, randn({10000}, 14));
  const double expected = s.sigma[t - 1] * s.sigma[t - 1];
  EXPECT_NEAR(variance(out.data()), expected, 0.05 * expected);

  // With the predicted noise held at zero only the injected term remains.
  Tensor injected = denoising_step(Tensor::zeros({10000}), Tensor::zeros({10000}), t, s,
                                   SamplerMode::kAncestral, randn({10000}, 15));
  const double eta = s.sigma[t - 1] * std::sqrt(1.0 - s.alpha_bar(t) / s.alpha_bar(t - 1));
  EXPECT_NEAR(variance(injected.data()), eta * eta, 0.05 * eta * eta);
}

TEST(DenoisingStep, Errors) {
  const auto s = make_vp_schedule(100);
  Tensor x = Tensor::zeros({4});
  EXPECT_THROW(denoising_step(x, x, 0, s, SamplerMode::kDeterministic), StepIndexError);
  EXPECT_THROW(denoising_step(x, x, 5, s, SamplerMode::kAncestral), ConfigError);
  EXPECT_THROW(denoising_step(x, x, 5, s, SamplerMode::kDeterministic, x), ConfigError);

  NoiseSchedule tiny = s;
  tiny.alpha[7] = 1e-7;
  tiny.sigma[7] = std::sqrt(1.0 - 1e-14);
  EXPECT_THROW(denoising_step(x, x, 7, tiny, SamplerMode::kDeterministic), NumericError);
}

TEST(Cfg, EndpointsAndIdentity) {
  Tensor c = randn({3, 7}, 16);
  Tensor u = randn({3, 7}, 17);
  EXPECT_TRUE(bitwise_equal(cfg_combine(c, u, 1.0), c));
  EXPECT_TRUE(bitwise_equal(cfg_combine(c, u, 0.0), u));
  for (double w : {0.3, 1.5, 7.5}) {
    Tensor g = cfg_combine(c, u, w);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double ref = u.data()[i] + w * (c.data()[i] - u.data()[i]);
      worst = std::max(worst, std::abs(g.data()[i] - ref));
    }
    EXPECT_LT(worst, 1e-12);
  }
  EXPECT_THROW(cfg_combine(c, Tensor::zeros({7, 3}), 1.0), DimensionError);
}

TEST(Guidance, NegativeWeightRejected) {
  GuidanceConfig g{-0.5, 0};
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(SamplingTimesteps, UniformStrideEndsAtZero) {
  auto ts = sampling_timesteps(1000, 50, 1000);
  ASSERT_EQ(ts.size(), 51u);
  EXPECT_EQ(ts.front(), 1000);
  EXPECT_EQ(ts[1], 980);
  EXPECT_EQ(ts[49], 20);
  EXPECT_EQ(ts.back(), 0);

  auto partial = sampling_timesteps(1000, 50, 605);
  EXPECT_EQ(partial.front(), 605);
  EXPECT_EQ(partial[1], 600);
  EXPECT_EQ(partial.back(), 0);
}

TEST(SamplingLoop, DeterministicLoopIsBitwiseReproducible) {
  const auto s = make_vp_schedule(1000);
  auto run = [&] {
    Tensor x = randn({2, 6, 6}, 99);
    const auto ts = sampling_timesteps(1000, 50, 1000);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
      std::vector<double> e(x.numel());
      for (std::size_t j = 0; j < e.size(); ++j) e[j] = std::tanh(x.data()[j]) * 0.9;
      x = denoising_step_to(x, Tensor(x.shape(), e), ts[i], ts[i + 1], s, SamplerMode::kDeterministic);
    }
    return x;
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}
