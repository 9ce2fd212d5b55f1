#pragma once

#include <optional>
#include <vector>

#include "i2v/tensor.hpp"

namespace i2v::diffusion {

/// Discretized variance-preserving schedule: x_t = alpha[t] x_0 + sigma[t] eps
/// with alpha[t]^2 + sigma[t]^2 = 1 and alpha[0] = 1.
struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> alpha;
  std::vector<double> sigma;

  // Cumulative signal fraction alpha[t]^2, written abar_t in DDPM notation.
  double alpha_bar(int t) const { return alpha.at(t) * alpha.at(t); }
};

struct GuidanceConfig {
  double weight = 1.0;
  int uncond_token = 0;

  void validate() const;
};

enum class SamplerMode { kDeterministic, kAncestral };

// Cosine cumulative schedule (offset s = 0.008, abar clamped to [1e-5, 1]).
NoiseSchedule make_vp_schedule(int steps);

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Mean squared error over the frames whose mask entry is true.
///
/// Tensors are [batch, frames, ...]; frame_mask has one entry per frame. The
/// result is differentiable with respect to eps_pred.
Tensor epsilon_loss(const Tensor& eps_pred, const Tensor& eps_true, const std::vector<bool>& frame_mask);

/// One reverse step from t to t-1.
///
/// Reconstructs x0_hat = (x_t - sigma[t] eps) / alpha[t] and re-noises it to
/// level t-1. Ancestral mode injects fresh noise with
/// eta = sigma[t-1] sqrt(1 - abar_t / abar_{t-1}); deterministic mode is DDIM.
Tensor denoising_step(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& schedule,
                      SamplerMode mode, const std::optional<Tensor>& noise = std::nullopt);

// Same update between arbitrary levels t > t_prev >= 0, used for strided sampling.
Tensor denoising_step_to(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev,
                         const NoiseSchedule& schedule, SamplerMode mode,
                         const std::optional<Tensor>& noise = std::nullopt);

// w * eps_cond + (1 - w) * eps_uncond
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

// Descending timesteps visited by a uniform-stride sampler that starts at
// `start` (inclusive) and ends at 0; the list always ends with 0.
std::vector<int> sampling_timesteps(int total_steps, int sampler_steps, int start);

}  // namespace i2v::diffusion
