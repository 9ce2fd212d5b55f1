#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "i2v/video_model.hpp"

namespace i2v::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout is described in docs/formats.md.
struct Checkpoint {
  nlohmann::json metadata;  // holds "model" (ModelConfig) plus free-form fields
  std::map<std::string, Tensor> values;
  std::map<std::string, ParamRole> roles;
};

void save_checkpoint(const VideoModel& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());
// Throws IoError when the file is missing or malformed.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds the model; adapters are attached when the file carries any.
VideoModel load_model(const std::filesystem::path& path);

// Copies only the trainable entries of a checkpoint into a model with adapters.
void load_adapters(VideoModel& model, const Checkpoint& ckpt);

// 64-bit FNV-1a of the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace i2v::model
