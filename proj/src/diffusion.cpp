#include "i2v/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "i2v/errors.hpp"

namespace i2v::diffusion {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_step(const NoiseSchedule& s, int t, const char* op) {
  if (t < 0 || t > s.steps) {
    throw StepIndexError(std::string(op) + ": step " + std::to_string(t) + " outside [0, " +
                         std::to_string(s.steps) + "]");
  }
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw ConfigError("guidance weight must be a finite nonnegative number");
  }
}

NoiseSchedule make_vp_schedule(int steps) {
  if (steps < 1) throw ConfigError("noise schedule needs at least one step");
  constexpr double kOffset = 0.008;
  constexpr double kFloor = 1e-5;
  const double pi = std::numbers::pi;
  auto f = [&](double u) {
    const double c = std::cos((u + kOffset) / (1.0 + kOffset) * pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  NoiseSchedule s;
  s.steps = steps;
  s.alpha.resize(steps + 1);
  s.sigma.resize(steps + 1);
  for (int t = 0; t <= steps; ++t) {
    const double abar = std::clamp(f(static_cast<double>(t) / steps) / f0, kFloor, 1.0);
    s.alpha[t] = std::sqrt(abar);
    s.sigma[t] = std::sqrt(1.0 - abar);
  }
  s.alpha[0] = 1.0;
  s.sigma[0] = 0.0;
  return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_diffuse");
  require_step(schedule, t, "forward_diffuse");
  const double a = schedule.alpha[t];
  const double s = schedule.sigma[t];
  std::vector<double> out(x0.numel());
  auto x = x0.data();
  auto e = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + s * e[i];
  return Tensor(x0.shape(), std::move(out));
}

Tensor epsilon_loss(const Tensor& eps_pred, const Tensor& eps_true, const std::vector<bool>& frame_mask) {
  require_same_shape(eps_pred, eps_true, "epsilon_loss");
  if (eps_pred.rank() < 2 || eps_pred.dim(1) != frame_mask.size()) {
    throw DimensionError("epsilon_loss: mask of length " + std::to_string(frame_mask.size()) +
                         " does not match frame axis of " + shape_str(eps_pred.shape()));
  }
  const auto included = std::count(frame_mask.begin(), frame_mask.end(), true);
  if (included == 0) throw ConfigError("epsilon_loss: every frame is masked out");

  Shape mask_shape(eps_pred.rank(), 1);
  mask_shape[1] = frame_mask.size();
  std::vector<double> weights(frame_mask.size());
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = frame_mask[i] ? 1.0 : 0.0;
  const Tensor mask(mask_shape, std::move(weights));

  const double count = static_cast<double>(eps_pred.numel() / frame_mask.size()) * included;
  const Tensor diff = sub(eps_pred, eps_true);
  return scale(sum_all(mul(mul(diff, diff), mask)), 1.0 / count);
}

Tensor denoising_step_to(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev,
                         const NoiseSchedule& schedule, SamplerMode mode,
                         const std::optional<Tensor>& noise) {
  require_same_shape(x_t, eps_pred, "denoising_step");
  if (t < 1) throw StepIndexError("denoising_step: t must be at least 1, got " + std::to_string(t));
  require_step(schedule, t, "denoising_step");
  if (t_prev < 0 || t_prev >= t) {
    throw StepIndexError("denoising_step: target step " + std::to_string(t_prev) +
                         " must lie in [0, " + std::to_string(t) + ")");
  }
  const double a_t = schedule.alpha[t];
  if (a_t < 1e-6) throw NumericError("denoising_step: alpha[t] below 1e-6 at t=" + std::to_string(t));
  const bool ancestral = mode == SamplerMode::kAncestral;
  if (ancestral != noise.has_value()) {
    throw ConfigError("denoising_step: noise is required exactly when sampling ancestrally");
  }
  if (ancestral) require_same_shape(x_t, *noise, "denoising_step");

  const double s_t = schedule.sigma[t];
  const double a_prev = schedule.alpha[t_prev];
  const double s_prev = schedule.sigma[t_prev];
  double eta = 0.0;
  double eps_coef = s_prev;
  if (ancestral) {
    const double ratio = schedule.alpha_bar(t) / schedule.alpha_bar(t_prev);
    eta = s_prev * std::sqrt(std::max(0.0, 1.0 - ratio));
    eps_coef = std::sqrt(std::max(0.0, s_prev * s_prev - eta * eta));
  }
  auto x = x_t.data();
  auto e = eps_pred.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0_hat = (x[i] - s_t * e[i]) / a_t;
    out[i] = a_prev * x0_hat + eps_coef * e[i];
  }
  if (ancestral) {
    auto z = noise->data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += eta * z[i];
  }
  return Tensor(x_t.shape(), std::move(out));
}

Tensor denoising_step(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& schedule,
                      SamplerMode mode, const std::optional<Tensor>& noise) {
  if (t < 1) throw StepIndexError("denoising_step: t must be at least 1, got " + std::to_string(t));
  return denoising_step_to(x_t, eps_pred, t, t - 1, schedule, mode, noise);
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  require_same_shape(eps_cond, eps_uncond, "cfg_combine");
  auto c = eps_cond.data();
  auto u = eps_uncond.data();
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * c[i] + (1.0 - w) * u[i];
  return Tensor(eps_cond.shape(), std::move(out));
}

std::vector<int> sampling_timesteps(int total_steps, int sampler_steps, int start) {
  if (sampler_steps < 1) throw ConfigError("sampler needs at least one step");
  if (start < 1 || start > total_steps) {
    throw StepIndexError("sampler start step " + std::to_string(start) + " outside [1, " +
                         std::to_string(total_steps) + "]");
  }
  std::vector<int> ts{start};
  for (int k = sampler_steps; k >= 1; --k) {
    const int t = static_cast<int>(std::lround(static_cast<double>(total_steps) * k / sampler_steps));
    if (t < ts.back()) ts.push_back(t);
  }
  ts.push_back(0);
  return ts;
}

}  // namespace i2v::diffusion
