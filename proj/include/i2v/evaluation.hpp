#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "i2v/tensor.hpp"
#include "i2v/video_model.hpp"

namespace i2v::eval {

// Videos passed to the metrics are image space: [l, 3, h, w] in [0, 1].

// Model space (2x - 1) back to image space, clamped to [0, 1].
Tensor to_image(const Tensor& model_space);
Tensor to_model_space(const Tensor& image);

// [3, h, w] -> [h, w] with weights 0.299 / 0.587 / 0.114.
Tensor luminance(const Tensor& rgb);

struct FlowField {
  Tensor u, v;  // [h, w], pixels from frame a to frame b
  double mean_magnitude() const;
};

struct FlowOptions {
  int iterations = 100;
  double smoothness = 0.1;  // alpha^2, for intensities on a 0..255 scale

  void validate() const;
};

/// Horn-Schunck on grayscale frames [h, w] in [0, 1], zero initial flow.
///
/// Spatial derivatives are central differences averaged over both frames,
/// It = b - a, borders replicate. NumericError on non-finite input.
FlowField estimate_flow(const Tensor& a, const Tensor& b, const FlowOptions& opt = {});

// Bilinear resampling of a [h, w] frame at (x - u, y - v), coordinates
// clamped to the border: the prediction of the next frame under the flow.
Tensor warp_frame(const Tensor& frame, const FlowField& flow);

// Mean flow magnitude over consecutive pairs and pixels, px/frame.
double flow_score(const Tensor& video, const FlowOptions& opt = {});

// Mean squared luminance error between each warped frame and its successor,
// averaged over pairs.
double warping_error(const Tensor& video, const FlowOptions& opt = {});

// Maps one image-space frame [3, h, w] to an embedding vector.
using FrameEmbedder = std::function<std::vector<double>(const Tensor& frame)>;

// Flattened content-encoder tokens of the model; the encoder is not changed.
FrameEmbedder content_embedder(const model::VideoModel& model);

/// Mean over frames 1.. of the cosine similarity between each frame's
/// embedding and frame 0's. Stands in for a CLIP-based image/video score.
///
/// Two zero embeddings count as identical (1); one zero embedding as
/// unrelated (0).
double frame_consistency(const Tensor& video, const FrameEmbedder& embed);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct MetricReport {
  double consistency = 0.0;
  double flow_score = 0.0;
  double warping_error = 0.0;
  double trainable_fraction = 0.0;

  void validate() const;  // NumericError when a field is not finite
};

MetricReport evaluate_video(const Tensor& video, const FrameEmbedder& embed, double trainable_fraction,
                            const FlowOptions& opt = {});

// Per-field mean over videos; clips are scored in parallel.
MetricReport evaluate_videos(const std::vector<Tensor>& videos, const FrameEmbedder& embed,
                             double trainable_fraction, const FlowOptions& opt = {});

nlohmann::json to_json(const MetricReport& r, const std::string& config_hash, std::uint64_t seed);

}  // namespace i2v::eval
