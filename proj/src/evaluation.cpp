#include "i2v/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "i2v/errors.hpp"
#include "i2v/parallel.hpp"

namespace i2v::eval {

namespace {

// The smoothness weight is expressed for 8-bit intensities; frames arrive in [0, 1].
constexpr double kFlowIntensityScale = 255.0;

void check_video(const Tensor& video, const char* what) {
  if (video.rank() != 4 || video.dim(1) != 3) {
    throw DimensionError(std::string(what) + ": expected a [l, 3, h, w] video, got " + shape_str(video.shape()));
  }
  if (video.dim(0) < 2) throw ConfigError(std::string(what) + ": needs at least 2 frames");
}

Tensor frame_of(const Tensor& video, std::size_t i) {
  const std::size_t n = 3 * video.dim(2) * video.dim(3);
  const auto d = video.data().subspan(i * n, n);
  return Tensor({3, video.dim(2), video.dim(3)}, std::vector<double>(d.begin(), d.end()));
}

// 3x3 neighbourhood mean with weights 1/6 (edges) and 1/12 (corners), centre excluded.
void neighbour_mean(const std::vector<double>& f, std::size_t h, std::size_t w, std::vector<double>& out) {
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return f[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t yy = 0; yy < h; ++yy) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const auto y = static_cast<std::ptrdiff_t>(yy), x = static_cast<std::ptrdiff_t>(xx);
      const double edges = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1);
      const double corners = at(y - 1, x - 1) + at(y - 1, x + 1) + at(y + 1, x - 1) + at(y + 1, x + 1);
      out[yy * w + xx] = edges / 6.0 + corners / 12.0;
    }
  }
}

}  // namespace

Tensor to_image(const Tensor& model_space) {
  std::vector<double> d(model_space.data().begin(), model_space.data().end());
  for (double& x : d) x = std::clamp((x + 1.0) / 2.0, 0.0, 1.0);
  return Tensor(model_space.shape(), std::move(d));
}

Tensor to_model_space(const Tensor& image) {
  std::vector<double> d(image.data().begin(), image.data().end());
  for (double& x : d) x = 2.0 * x - 1.0;
  return Tensor(image.shape(), std::move(d));
}

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("luminance: expected [3, h, w], got " + shape_str(rgb.shape()));
  const std::size_t n = rgb.dim(1) * rgb.dim(2);
  const auto s = rgb.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = 0.299 * s[i] + 0.587 * s[n + i] + 0.114 * s[2 * n + i];
  return Tensor({rgb.dim(1), rgb.dim(2)}, std::move(out));
}

double FlowField::mean_magnitude() const {
  const auto a = u.data(), b = v.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::hypot(a[i], b[i]);
  return sum / static_cast<double>(a.size());
}

void FlowOptions::validate() const {
  if (iterations < 0) throw ConfigError("eval.flow_iterations: must be non-negative");
  if (!(smoothness > 0.0) || !std::isfinite(smoothness)) throw ConfigError("eval.flow_smoothness: must be positive");
}

FlowField estimate_flow(const Tensor& a, const Tensor& b, const FlowOptions& opt) {
  opt.validate();
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("estimate_flow: frames must be matching [h, w], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t h = a.dim(0), w = a.dim(1), n = h * w;
  const auto fa = a.data(), fb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(fa[i]) || !std::isfinite(fb[i])) throw NumericError("estimate_flow: non-finite pixel");
  }
  auto px = [&](std::span<const double> f, std::size_t y, std::size_t x) { return f[y * w + x]; };
  std::vector<double> ix(n), iy(n), it(n);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y == 0 ? 0 : y - 1, yp = std::min(y + 1, h - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x == 0 ? 0 : x - 1, xp = std::min(x + 1, w - 1);
      const std::size_t i = y * w + x;
      constexpr double k = kFlowIntensityScale;
      ix[i] = 0.25 * k * ((px(fa, y, xp) - px(fa, y, xm)) + (px(fb, y, xp) - px(fb, y, xm)));
      iy[i] = 0.25 * k * ((px(fa, yp, x) - px(fa, ym, x)) + (px(fb, yp, x) - px(fb, ym, x)));
      it[i] = k * (fb[i] - fa[i]);
    }
  }
  std::vector<double> u(n, 0.0), v(n, 0.0), ubar(n), vbar(n);
  for (int k = 0; k < opt.iterations; ++k) {
    neighbour_mean(u, h, w, ubar);
    neighbour_mean(v, h, w, vbar);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (ix[i] * ubar[i] + iy[i] * vbar[i] + it[i]) / (opt.smoothness + ix[i] * ix[i] + iy[i] * iy[i]);
      u[i] = ubar[i] - ix[i] * r;
      v[i] = vbar[i] - iy[i] * r;
    }
  }
  return {Tensor({h, w}, std::move(u)), Tensor({h, w}, std::move(v))};
}

Tensor warp_frame(const Tensor& frame, const FlowField& flow) {
  if (frame.rank() != 2 || flow.u.shape() != frame.shape() || flow.v.shape() != frame.shape()) {
    throw DimensionError("warp_frame: flow and frame extents differ");
  }
  const std::size_t h = frame.dim(0), w = frame.dim(1);
  const auto f = frame.data(), u = flow.u.data(), v = flow.v.data();
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double sx = std::clamp(static_cast<double>(x) - u[i], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(static_cast<double>(y) - v[i], 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double tx = sx - static_cast<double>(x0), ty = sy - static_cast<double>(y0);
      const double top = f[y0 * w + x0] * (1.0 - tx) + f[y0 * w + x1] * tx;
      const double bottom = f[y1 * w + x0] * (1.0 - tx) + f[y1 * w + x1] * tx;
      out[i] = top * (1.0 - ty) + bottom * ty;
    }
  }
  return Tensor({h, w}, std::move(out));
}

double flow_score(const Tensor& video, const FlowOptions& opt) {
  check_video(video, "flow_score");
  const std::size_t pairs = video.dim(0) - 1;
  double sum = 0.0;
  Tensor prev = luminance(frame_of(video, 0));
  for (std::size_t i = 0; i < pairs; ++i) {
    Tensor next = luminance(frame_of(video, i + 1));
    sum += estimate_flow(prev, next, opt).mean_magnitude();
    prev = next;
  }
  return sum / static_cast<double>(pairs);
}

double warping_error(const Tensor& video, const FlowOptions& opt) {
  check_video(video, "warping_error");
  const std::size_t pairs = video.dim(0) - 1;
  double sum = 0.0;
  Tensor prev = luminance(frame_of(video, 0));
  for (std::size_t i = 0; i < pairs; ++i) {
    Tensor next = luminance(frame_of(video, i + 1));
    const Tensor warped = warp_frame(prev, estimate_flow(prev, next, opt));
    const auto p = warped.data(), q = next.data();
    double se = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) se += (p[k] - q[k]) * (p[k] - q[k]);
    sum += se / static_cast<double>(p.size());
    prev = next;
  }
  return sum / static_cast<double>(pairs);
}

FrameEmbedder content_embedder(const model::VideoModel& model) {
  return [&model](const Tensor& frame) {
    const Tensor tokens = model.encode_image_condition(to_model_space(frame));
    return std::vector<double>(tokens.data().begin(), tokens.data().end());
  };
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: embedding sizes differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return 1.0;
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double frame_consistency(const Tensor& video, const FrameEmbedder& embed) {
  check_video(video, "frame_consistency");
  const std::vector<double> ref = embed(frame_of(video, 0));
  double sum = 0.0;
  for (std::size_t i = 1; i < video.dim(0); ++i) sum += cosine_similarity(ref, embed(frame_of(video, i)));
  return sum / static_cast<double>(video.dim(0) - 1);
}

void MetricReport::validate() const {
  for (double v : {consistency, flow_score, warping_error, trainable_fraction}) {
    if (!std::isfinite(v)) throw NumericError("metric report has a non-finite field");
  }
}

MetricReport evaluate_video(const Tensor& video, const FrameEmbedder& embed, double trainable_fraction,
                            const FlowOptions& opt) {
  MetricReport r;
  r.consistency = frame_consistency(video, embed);
  r.flow_score = flow_score(video, opt);
  r.warping_error = warping_error(video, opt);
  r.trainable_fraction = trainable_fraction;
  r.validate();
  return r;
}

MetricReport evaluate_videos(const std::vector<Tensor>& videos, const FrameEmbedder& embed,
                             double trainable_fraction, const FlowOptions& opt) {
  if (videos.empty()) throw ConfigError("evaluate_videos: no videos");
  std::vector<MetricReport> each(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) { each[i] = evaluate_video(videos[i], embed, trainable_fraction, opt); });
  MetricReport mean;
  mean.trainable_fraction = trainable_fraction;
  for (const auto& r : each) {
    mean.consistency += r.consistency;
    mean.flow_score += r.flow_score;
    mean.warping_error += r.warping_error;
  }
  const auto n = static_cast<double>(each.size());
  mean.consistency /= n;
  mean.flow_score /= n;
  mean.warping_error /= n;
  return mean;
}

nlohmann::json to_json(const MetricReport& r, const std::string& config_hash, std::uint64_t seed) {
  return {{"consistency", r.consistency},
          {"consistency_note", "content-encoder cosine similarity to frame 1, a stand-in for a CLIP score"},
          {"flow_score", r.flow_score},
          {"warping_error", r.warping_error},
          {"trainable_fraction", r.trainable_fraction},
          {"config_hash", config_hash},
          {"seed", seed}};
}

}  // namespace i2v::eval
