#pragma once

#include <cstdint>

#include "i2v/diffusion.hpp"
#include "i2v/tensor.hpp"
#include "i2v/video_model.hpp"

namespace i2v::prior {

struct DegradationParams {
  double t0 = 1.0;  // fraction of the schedule, (0, 1]
  double p = 0.6;   // probability that a pixel keeps its original value
  double blur_sigma = 1.5;
  std::uint64_t mask_seed = 0;

  void validate() const;
  // floor(t0 * T); ConfigError when that is step 0.
  int start_step(int total_steps) const;
};

// [h, w] of 0/1 entries; 1 with probability p.
Tensor keep_mask(std::size_t h, std::size_t w, double p, std::uint64_t seed);

// Separable Gaussian of radius ceil(3 sigma), reflect padding, x: [c, h, w].
Tensor gaussian_blur(const Tensor& x, double sigma);

// mask * x + (1 - mask) * blur(x), mask shared across channels.
Tensor degrade_with_mask(const Tensor& x, const Tensor& mask, double blur_sigma);
Tensor degrade(const Tensor& x, const DegradationParams& dp);

struct InitialVideo {
  model::VideoLatent latent;
  int start_step = 0;
};

/// Frame 0 is x1 itself; frames 1..l-1 start at
/// alpha[t0] * degrade(x1) + sigma[t0] * eps_i with independent eps_i.
InitialVideo init_video_latents(const Tensor& x1, const DegradationParams& dp,
                                const diffusion::NoiseSchedule& schedule, std::size_t frames,
                                std::uint64_t seed);

}  // namespace i2v::prior
