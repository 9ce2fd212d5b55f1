#include "i2v/similarity_prior.hpp"

#include <cmath>
#include <random>

#include "i2v/errors.hpp"

namespace i2v::prior {

namespace {

// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - m);
}

std::vector<double> gaussian_kernel(double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

}  // namespace

void DegradationParams::validate() const {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw ConfigError("prior.t0 must lie in (0, 1], got " + std::to_string(t0));
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("prior.p must lie in [0, 1], got " + std::to_string(p));
  if (!(blur_sigma > 0.0)) throw ConfigError("prior.blur_sigma must be positive, got " + std::to_string(blur_sigma));
}

int DegradationParams::start_step(int total_steps) const {
  validate();
  const int t = static_cast<int>(std::floor(t0 * static_cast<double>(total_steps)));
  if (t < 1) {
    throw ConfigError("prior.t0 = " + std::to_string(t0) + " maps to step 0 of " + std::to_string(total_steps) +
                      "; nothing would be denoised");
  }
  return t;
}

Tensor keep_mask(std::size_t h, std::size_t w, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> m(h * w);
  for (double& v : m) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = u < p ? 1.0 : 0.0;
  }
  return Tensor({h, w}, std::move(m));
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive, got " + std::to_string(sigma));
  if (x.rank() != 3) throw DimensionError("gaussian_blur: expected [c, h, w], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  auto src = x.data();
  std::vector<double> rows(src.size()), out(src.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* in = src.data() + ch * h * w;
    double* mid = rows.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (long j = -r; j <= r; ++j) {
          acc += k[static_cast<std::size_t>(j + r)] * in[y * w + reflect(static_cast<long>(xx) + j, static_cast<long>(w))];
        }
        mid[y * w + xx] = acc;
      }
    }
    double* dst = out.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (long j = -r; j <= r; ++j) {
          acc += k[static_cast<std::size_t>(j + r)] * mid[reflect(static_cast<long>(y) + j, static_cast<long>(h)) * w + xx];
        }
        dst[y * w + xx] = acc;
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor degrade_with_mask(const Tensor& x, const Tensor& mask, double blur_sigma) {
  if (x.rank() != 3 || mask.shape() != Shape{x.dim(1), x.dim(2)}) {
    throw DimensionError("degrade: mask " + shape_str(mask.shape()) + " does not fit image " + shape_str(x.shape()));
  }
  const Tensor blurred = gaussian_blur(x, blur_sigma);
  const std::size_t plane = x.dim(1) * x.dim(2);
  auto xs = x.data();
  auto bs = blurred.data();
  auto ms = mask.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = ms[i % plane];
    out[i] = m * xs[i] + (1.0 - m) * bs[i];
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor degrade(const Tensor& x, const DegradationParams& dp) {
  dp.validate();
  if (x.rank() != 3) throw DimensionError("degrade: expected [c, h, w], got " + shape_str(x.shape()));
  return degrade_with_mask(x, keep_mask(x.dim(1), x.dim(2), dp.p, dp.mask_seed), dp.blur_sigma);
}

InitialVideo init_video_latents(const Tensor& x1, const DegradationParams& dp,
                                const diffusion::NoiseSchedule& schedule, std::size_t frames,
                                std::uint64_t seed) {
  if (frames < 2) throw ConfigError("init_video_latents: need at least 2 frames, got " + std::to_string(frames));
  const int t = dp.start_step(schedule.steps);
  const Tensor base = degrade(x1, dp);
  std::mt19937_64 rng(seed);
  std::vector<Tensor> rest;
  rest.reserve(frames - 1);
  for (std::size_t i = 1; i < frames; ++i) {
    rest.push_back(diffusion::forward_diffuse(base, t, Tensor::randn(x1.shape(), rng), schedule));
  }
  return {model::assemble_i2v_input(x1, rest), t};
}

}  // namespace i2v::prior
