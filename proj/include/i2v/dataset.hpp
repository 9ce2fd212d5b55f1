#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "i2v/tensor.hpp"

namespace i2v::training {

enum class ShapeKind { kSquare = 0, kCircle = 1, kTriangle = 2 };

struct SyntheticClip {
  Tensor frames;  // [l, 3, h, w], values in [0, 1]
  std::vector<int> caption;  // shape, color, direction tokens
  double dx = 0.0, dy = 0.0;  // pixels per frame
  std::uint64_t seed = 0;
};

struct ClipSpec {
  ShapeKind shape = ShapeKind::kSquare;
  int color = 0;      // index into the color words
  int direction = 0;  // index into the direction words; 0 = right, clockwise
  int speed = 1;
  double x = 0.0, y = 0.0;  // center in frame 0, pixels
};

inline constexpr double kBackgroundLevel = 0.5;
// Half extent of every shape in pixels.
inline constexpr double kShapeRadius = 5.0;

// Unit direction (right, down-right, ...) in image coordinates, y down.
void direction_vector(int direction, int& ux, int& uy);

// Renders with anti-aliased edges and toroidal wraparound.
SyntheticClip render_clip(const ClipSpec& spec, std::size_t frames, std::size_t h, std::size_t w,
                          double radius = kShapeRadius);

// Smooth toroidal texture (a few low-frequency sinusoids with random phases)
// translated by (dx, dy) per frame; every pixel moves, unlike the shape clips.
Tensor render_texture_clip(std::size_t frames, std::size_t h, std::size_t w, double dx, double dy,
                           std::uint64_t seed);

// Per-clip seed derived from the dataset seed.
std::uint64_t clip_seed(std::uint64_t dataset_seed, std::size_t index);
ClipSpec draw_clip_spec(std::uint64_t seed, std::size_t h, std::size_t w);

// Throws ConfigError when the shape does not fit on the canvas.
std::vector<SyntheticClip> generate_dataset(std::size_t n_clips, std::size_t frames, std::size_t h, std::size_t w,
                                            std::uint64_t seed, double radius = kShapeRadius);

// Binary cache, layout in docs/formats.md.
inline constexpr std::uint32_t kDatasetVersion = 1;
void save_dataset(const std::vector<SyntheticClip>& clips, const std::filesystem::path& path);
std::vector<SyntheticClip> load_dataset(const std::filesystem::path& path);

}  // namespace i2v::training
