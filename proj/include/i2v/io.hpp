#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "i2v/tensor.hpp"

namespace i2v::io {

// Binary PPM (P6, maxval 255); channel values round(255 x) clamped to [0, 255].
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// [3, h, w] in [0, 1]. Accepts header comments; IoError on anything but
// P6 with maxval 255.
Tensor read_ppm(const std::filesystem::path& path);

// frame_0001.ppm for index 0.
std::string frame_filename(std::size_t index);

// Pretty-printed with a trailing newline; parent directories are created.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace i2v::io
