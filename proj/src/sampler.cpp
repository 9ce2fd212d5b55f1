#include "i2v/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "i2v/errors.hpp"

namespace i2v::sampling {

void SamplerOptions::validate() const {
  if (steps < 1) throw ConfigError("sampler.steps: must be at least 1");
  if (!std::isfinite(guidance)) throw ConfigError("sampler.guidance: must be finite");
}

namespace {

// Epsilon whose implied x0 is the clamped estimate.
Tensor clipped_epsilon(const Tensor& x, const Tensor& eps, int t, const diffusion::NoiseSchedule& schedule) {
  const double a = schedule.alpha[t], s = schedule.sigma[t];
  auto xv = x.data();
  auto ev = eps.data();
  std::vector<double> out(ev.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = std::clamp((xv[i] - s * ev[i]) / a, -1.0, 1.0);
    out[i] = (xv[i] - a * x0) / s;
  }
  return Tensor(eps.shape(), std::move(out));
}

}  // namespace

Tensor sample_video(const model::VideoModel& model, const diffusion::NoiseSchedule& schedule,
                    const SampleRequest& request, const SamplerOptions& options) {
  options.validate();
  request.prior.validate();
  const Tensor& x1 = request.reference;
  prior::InitialVideo init = prior::init_video_latents(x1, request.prior, schedule, request.frames, request.seed);
  const std::vector<int> ts = diffusion::sampling_timesteps(schedule.steps, options.steps, init.start_step);

  const model::ConditionEmbedding cond =
      model.condition(request.caption, request.image_tokens ? std::optional<Tensor>(x1) : std::nullopt);
  const std::vector<Tensor> conds{cond.tokens(), model.unconditional().tokens()};

  const Shape video_shape = init.latent.frames.shape();
  Tensor x = reshape(init.latent.frames, {1, video_shape[0], video_shape[1], video_shape[2], video_shape[3]});
  // Separate stream from the prior's so ancestral noise does not alias it.
  std::mt19937_64 rng(request.seed ^ 0x5a4d504c45524e47ULL);
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], t_prev = ts[k + 1];
    const int steps[2] = {t, t};
    const Tensor eps = model.forward(concat({x, x}, 0), steps, conds);
    Tensor guided = diffusion::cfg_combine(slice(eps, 0, 0, 1), slice(eps, 0, 1, 2), options.guidance);
    if (options.clip_x0) guided = clipped_epsilon(x, guided, t, schedule);
    std::optional<Tensor> noise;
    if (options.mode == diffusion::SamplerMode::kAncestral) noise = Tensor::randn(x.shape(), rng);
    x = diffusion::denoising_step_to(x, guided, t, t_prev, schedule, options.mode, noise);
    auto d = x.mutable_data();
    std::copy(x1.data().begin(), x1.data().end(), d.begin());
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("sample_video: non-finite output");
  }
  return reshape(x, video_shape);
}

}  // namespace i2v::sampling
