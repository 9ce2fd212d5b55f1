#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "i2v/diffusion.hpp"
#include "i2v/similarity_prior.hpp"
#include "i2v/video_model.hpp"

namespace i2v::sampling {

struct SamplerOptions {
  int steps = 50;
  diffusion::SamplerMode mode = diffusion::SamplerMode::kDeterministic;
  double guidance = 3.0;
  // Clamp the predicted clean video to the data range [-1, 1] before each
  // update (the epsilon used for the step is re-derived from the clamped x0).
  bool clip_x0 = true;

  void validate() const;
};

struct SampleRequest {
  Tensor reference;  // [3, h, w], model space; becomes frame 0 unchanged
  std::vector<int> caption;
  bool image_tokens = true;  // condition on the reference through the content encoder
  std::size_t frames = 8;
  prior::DegradationParams prior;
  std::uint64_t seed = 0;  // initial noise and ancestral noise
};

/// First-frame-conditioned sampling.
///
/// Frames 1.. start from the similarity prior at floor(t0 * T) and are
/// denoised on the strided schedule with classifier-free guidance against
/// the null caption; frame 0 is reset to the reference after every step.
/// With clip_x0 the x0 estimate is clamped each step; near t = T, where alpha
/// is tiny, small epsilon errors otherwise blow up the estimate.
/// Returns the model-space video [frames, 3, h, w]. NumericError if the
/// result is not finite.
Tensor sample_video(const model::VideoModel& model, const diffusion::NoiseSchedule& schedule,
                    const SampleRequest& request, const SamplerOptions& options);

}  // namespace i2v::sampling
