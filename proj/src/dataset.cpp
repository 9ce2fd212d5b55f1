#include "i2v/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "i2v/errors.hpp"
#include "i2v/vocabulary.hpp"

namespace i2v::training {

namespace {

constexpr char kMagic[8] = {'I', '2', 'V', 'D', 'A', 'T', 'A', '\0'};

constexpr double kColors[3][3] = {{0.9, 0.15, 0.1}, {0.1, 0.8, 0.2}, {0.15, 0.25, 0.9}};

// Signed distance in pixels; negative inside.
double shape_distance(ShapeKind kind, double px, double py, double r) {
  switch (kind) {
    case ShapeKind::kCircle:
      return std::hypot(px, py) - r;
    case ShapeKind::kSquare: {
      const double qx = std::abs(px) - r, qy = std::abs(py) - r;
      return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
    }
    case ShapeKind::kTriangle: {
      // Equilateral, side 2r, apex up (image y grows downward).
      const double k = std::sqrt(3.0);
      double x = std::abs(px) - r;
      double y = -py + r / k;
      if (x + k * y > 0.0) {
        const double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
        x = nx;
        y = ny;
      }
      x -= std::clamp(x, -2.0 * r, 0.0);
      return -std::hypot(x, y) * (y < 0.0 ? -1.0 : 1.0);
    }
  }
  return 0.0;
}

// Offset wrapped into [-n/2, n/2).
double wrap(double d, double n) {
  d = std::fmod(d + n / 2.0, n);
  if (d < 0.0) d += n;
  return d - n / 2.0;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated dataset cache " + path.string());
  return v;
}

}  // namespace

void direction_vector(int direction, int& ux, int& uy) {
  static constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  if (direction < 0 || direction >= 8) throw ConfigError("direction index out of range");
  ux = kDx[direction];
  uy = kDy[direction];
}

SyntheticClip render_clip(const ClipSpec& spec, std::size_t frames, std::size_t h, std::size_t w, double radius) {
  if (frames == 0 || h == 0 || w == 0) throw ConfigError("data: clip extents must be positive");
  if (2.0 * radius + 2.0 > static_cast<double>(std::min(h, w))) {
    throw ConfigError("data.shape_radius: shape of radius " + std::to_string(radius) + " does not fit a " +
                      std::to_string(h) + "x" + std::to_string(w) + " canvas");
  }
  int ux = 0, uy = 0;
  direction_vector(spec.direction, ux, uy);
  SyntheticClip clip;
  clip.dx = ux * spec.speed;
  clip.dy = uy * spec.speed;
  clip.caption = {kShapeTokenBase + static_cast<int>(spec.shape), kColorTokenBase + spec.color,
                  kDirectionTokenBase + spec.direction};
  const double* color = kColors[spec.color];
  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  std::vector<double> data(frames * 3 * h * w);
  for (std::size_t f = 0; f < frames; ++f) {
    const double cx = spec.x + clip.dx * static_cast<double>(f);
    const double cy = spec.y + clip.dy * static_cast<double>(f);
    for (std::size_t y = 0; y < h; ++y) {
      const double py = wrap(static_cast<double>(y) + 0.5 - cy, fh);
      for (std::size_t x = 0; x < w; ++x) {
        const double px = wrap(static_cast<double>(x) + 0.5 - cx, fw);
        const double cover = std::clamp(0.5 - shape_distance(spec.shape, px, py, radius), 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c) {
          data[((f * 3 + c) * h + y) * w + x] = kBackgroundLevel * (1.0 - cover) + color[c] * cover;
        }
      }
    }
  }
  clip.frames = Tensor({frames, 3, h, w}, std::move(data));
  return clip;
}

Tensor render_texture_clip(std::size_t frames, std::size_t h, std::size_t w, double dx, double dy,
                           std::uint64_t seed) {
  if (frames == 0 || h == 0 || w == 0) throw ConfigError("data: clip extents must be positive");
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::mt19937_64 rng(seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  constexpr double kTwoPi = 6.283185307179586;
  // Integer cycles per canvas keep the texture periodic; one or two cycles keep
  // it smooth enough for gradient-based flow at a couple of pixels per frame.
  const Wave waves[3] = {{1, 0, unit() * kTwoPi, 0.12}, {0, 1, unit() * kTwoPi, 0.12}, {1, 1, unit() * kTwoPi, 0.08}};
  std::vector<double> tint(3);
  for (auto& t : tint) t = 0.8 + 0.4 * unit();
  std::vector<double> data(frames * 3 * h * w);
  for (std::size_t f = 0; f < frames; ++f) {
    const double ox = dx * static_cast<double>(f), oy = dy * static_cast<double>(f);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) - ox) / static_cast<double>(w);
        const double v = (static_cast<double>(y) - oy) / static_cast<double>(h);
        double g = 0.0;
        for (const Wave& wv : waves) g += wv.amp * std::sin(kTwoPi * (wv.kx * u + wv.ky * v) + wv.phase);
        for (std::size_t c = 0; c < 3; ++c) data[((f * 3 + c) * h + y) * w + x] = kBackgroundLevel + tint[c] * g;
      }
    }
  }
  return Tensor({frames, 3, h, w}, std::move(data));
}

std::uint64_t clip_seed(std::uint64_t dataset_seed, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ static_cast<std::uint64_t>(index));
}

ClipSpec draw_clip_spec(std::uint64_t seed, std::size_t h, std::size_t w) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  ClipSpec s;
  s.shape = static_cast<ShapeKind>(pick(3));
  s.color = pick(3);
  s.direction = pick(8);
  s.speed = 1 + pick(2);
  s.x = unit() * static_cast<double>(w);
  s.y = unit() * static_cast<double>(h);
  return s;
}

std::vector<SyntheticClip> generate_dataset(std::size_t n_clips, std::size_t frames, std::size_t h, std::size_t w,
                                            std::uint64_t seed, double radius) {
  if (n_clips == 0) throw ConfigError("data.clips must be positive");
  std::vector<SyntheticClip> clips;
  clips.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    const std::uint64_t s = clip_seed(seed, i);
    SyntheticClip c = render_clip(draw_clip_spec(s, h, w), frames, h, w, radius);
    c.seed = s;
    clips.push_back(std::move(c));
  }
  return clips;
}

void save_dataset(const std::vector<SyntheticClip>& clips, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "dataset cache assumes a little-endian host");
  if (clips.empty()) throw ConfigError("save_dataset: no clips");
  const Shape& s = clips.front().frames.shape();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint64_t>(out, clips.size());
  for (std::size_t d : s) put<std::uint64_t>(out, d);  // l, channels, h, w
  for (const auto& c : clips) {
    if (c.frames.shape() != s || c.caption.size() != 3) throw DimensionError("save_dataset: clips differ in shape");
    put<std::uint64_t>(out, c.seed);
    for (int t : c.caption) put<std::uint32_t>(out, static_cast<std::uint32_t>(t));
    put<double>(out, c.dx);
    put<double>(out, c.dy);
    const auto d = c.frames.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SyntheticClip> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset cache not found: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("not a dataset cache: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kDatasetVersion) throw IoError("unsupported dataset cache version " + std::to_string(version));
  const auto n = get<std::uint64_t>(in, path);
  Shape s(4);
  for (auto& d : s) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
  if (n == 0 || shape_numel(s) == 0 || n > (1u << 24)) throw IoError("bad dataset cache header in " + path.string());
  std::vector<SyntheticClip> clips(n);
  for (auto& c : clips) {
    c.seed = get<std::uint64_t>(in, path);
    c.caption.resize(3);
    for (int& t : c.caption) t = static_cast<int>(get<std::uint32_t>(in, path));
    c.dx = get<double>(in, path);
    c.dy = get<double>(in, path);
    std::vector<double> d(shape_numel(s));
    if (!in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)))) {
      throw IoError("truncated dataset cache " + path.string());
    }
    c.frames = Tensor(s, std::move(d));
  }
  return clips;
}

}  // namespace i2v::training
