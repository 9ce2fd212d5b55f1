#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "i2v/attention.hpp"
#include "i2v/tensor.hpp"

namespace i2v::model {

struct ModelConfig {
  std::size_t resolution = 32;
  std::size_t image_channels = 3;
  // Space-to-depth factor applied before the first convolution.
  std::size_t patch = 2;
  // Channels of the down stages; the last entry is also the attention width.
  std::vector<std::size_t> stage_channels = {32, 64};
  std::size_t attention_width = 64;
  std::size_t cond_width = 32;
  std::size_t max_frames = 16;
  std::size_t groups = 4;
  std::size_t image_tokens = 4;
  std::size_t time_features = 64;
  std::size_t time_width = 128;
  std::size_t encoder_channels = 16;
  bool temporal_positions = true;
  // Attention blocks that receive an adapter branch; empty means all of them.
  std::vector<std::string> adapter_blocks;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Frames of one clip stacked as [frames, channels, h, w].
struct VideoLatent {
  Tensor frames;
  // Frames that contribute to the loss; frame 0 is excluded in I2V mode.
  std::vector<bool> frame_mask;

  std::size_t frame_count() const { return frames.dim(0); }
  Tensor frame(std::size_t i) const;
};

// Frame 0 = clean_first, frames 1.. = noised_rest, mask [false, true, ...].
VideoLatent assemble_i2v_input(const Tensor& clean_first, const std::vector<Tensor>& noised_rest);

/// Batched assembly for training: [b, l, c, h, w] clips where frame 0 is taken
/// from `clean` and the remaining frames from `noised`.
Tensor assemble_i2v_batch(const Tensor& clean, const Tensor& noised);

struct ConditionEmbedding {
  Tensor text_tokens;                 // [tokens_c, d_cond]
  std::optional<Tensor> image_tokens; // [tokens_i, d_cond]

  // Text tokens followed by image tokens.
  Tensor tokens() const;
};

enum class ParamRole : std::uint8_t { kFrozen = 0, kTrainable = 1 };

struct NamedParameter {
  std::string name;
  Tensor value;
  ParamRole role;
};

struct ParameterPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
  std::size_t frozen_count = 0;
  std::size_t trainable_count = 0;

  double fraction() const {
    return static_cast<double>(trainable_count) / static_cast<double>(trainable_count + frozen_count);
  }
};

struct ResBlockParams {
  Tensor gn1_gamma, gn1_beta, conv1, time_proj, gn2_gamma, gn2_beta, conv2;
  Tensor skip;  // 1x1 kernel when the channel count changes
};

struct AttnBlockParams {
  std::string name;
  Tensor sa_gamma, sa_beta;
  attention::SelfAttentionParams sa;
  std::optional<attention::AdapterParams> adapter;
  Tensor ca_gamma, ca_beta;
  attention::CrossAttentionParams ca;
  attention::TemporalAttentionParams temporal;
};

struct StageParams {
  ResBlockParams res;
  std::optional<AttnBlockParams> attn;
  Tensor resample;  // 1x1 conv of the down/up sampler
};

/// Video U-Net with a frozen base and optional per-block adapters.
///
/// Copies share parameter storage. parameters() enumerates every tensor under
/// a stable dotted name, which is also the checkpoint entry name.
class VideoModel {
 public:
  VideoModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Batched forward: video [b, l, c, h, w], one step index and one condition
  // token matrix per clip. Returns predicted noise with the shape of video.
  Tensor forward(const Tensor& video, std::span<const int> steps, std::span<const Tensor> conds) const;
  Tensor predict_epsilon(const VideoLatent& v, int t, const ConditionEmbedding& cond) const;

  // image: [c, h, w] -> [image_tokens, d_cond]; or batched [n, c, h, w].
  Tensor encode_image_condition(const Tensor& image) const;
  ConditionEmbedding condition(const std::vector<int>& caption, const std::optional<Tensor>& image) const;
  ConditionEmbedding unconditional() const;
  Tensor text_tokens(const std::vector<int>& caption) const;

  // Adds zero-output adapters to the configured blocks and freezes the base.
  void attach_adapters();
  bool has_adapters() const;
  // Shallow copy without adapter branches (the base text-to-video model).
  VideoModel without_adapters() const;
  VideoModel clone() const;

  // Base parameters trainable (base stage) or frozen (adapter stage).
  void set_base_trainable(bool flag);

  std::vector<NamedParameter> parameters() const;
  std::vector<Tensor> trainable_tensors() const;
  std::vector<std::string> attention_block_names() const;

  // Copies values for every named entry; shapes must match.
  void load_values(const std::map<std::string, Tensor>& values, bool require_all);

 private:
  Tensor time_embedding(std::span<const int> steps) const;
  Tensor res_block(const Tensor& x, const Tensor& temb, const ResBlockParams& p) const;
  Tensor attn_block(const Tensor& x, std::size_t clips, std::size_t frames, std::span<const Tensor> conds,
                    const AttnBlockParams& p) const;

  ModelConfig config_;
  Tensor time_w1_, time_b1_, time_w2_, time_b2_;
  Tensor text_table_;
  Tensor enc_conv1_, enc_conv2_, enc_conv3_, enc_proj_, enc_pool_;
  Tensor conv_in_;
  std::vector<StageParams> down_;
  ResBlockParams mid_res_;
  AttnBlockParams mid_attn_;
  std::vector<StageParams> up_;
  Tensor out_gamma_, out_beta_, conv_out_;
};

ParameterPartition partition_parameters(const VideoModel& model);

// Pixel rearrangements between [n, c, h, w] and [n, c*f*f, h/f, w/f].
Tensor space_to_depth(const Tensor& x, std::size_t factor);
Tensor depth_to_space(const Tensor& x, std::size_t factor);

// Sinusoidal features of integer step indices, [steps, width].
Tensor timestep_features(std::span<const int> steps, std::size_t width);

}  // namespace i2v::model
