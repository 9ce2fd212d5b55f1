#include "i2v/video_model.hpp"

#include <algorithm>
#include <cmath>

#include "i2v/errors.hpp"
#include "i2v/vocabulary.hpp"

namespace i2v::model {

namespace {

using attention::AdapterParams;

std::size_t isqrt_exact(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(const Shape& shape, double stddev) { return Tensor::randn(shape, rng_, stddev); }
  // Kernel or matrix scaled by 1/sqrt(fan_in).
  Tensor fan_in(const Shape& shape, std::size_t fan) { return normal(shape, 1.0 / std::sqrt(static_cast<double>(fan))); }
  Tensor conv(std::size_t out, std::size_t in, std::size_t k) { return fan_in({out, in, k, k}, in * k * k); }

 private:
  std::mt19937_64 rng_;
};

ResBlockParams make_res(Init& init, std::size_t cin, std::size_t cout, std::size_t time_width) {
  ResBlockParams p;
  p.gn1_gamma = Tensor::full({cin}, 1.0);
  p.gn1_beta = Tensor::zeros({cin});
  p.conv1 = init.conv(cout, cin, 3);
  p.time_proj = init.fan_in({time_width, cout}, time_width);
  p.gn2_gamma = Tensor::full({cout}, 1.0);
  p.gn2_beta = Tensor::zeros({cout});
  p.conv2 = init.conv(cout, cout, 3);
  if (cin != cout) p.skip = init.conv(cout, cin, 1);
  return p;
}

AttnBlockParams make_attn(Init& init, const std::string& name, const ModelConfig& c) {
  const std::size_t d = c.attention_width;
  auto sq = [&] { return init.fan_in({d, d}, d); };
  AttnBlockParams p;
  p.name = name;
  p.sa_gamma = Tensor::full({d}, 1.0);
  p.sa_beta = Tensor::zeros({d});
  p.sa = {sq(), sq(), sq(), sq()};
  p.ca_gamma = Tensor::full({d}, 1.0);
  p.ca_beta = Tensor::zeros({d});
  p.ca.wc_q = sq();
  p.ca.wc_k = init.fan_in({c.cond_width, d}, c.cond_width);
  p.ca.wc_v = init.fan_in({c.cond_width, d}, c.cond_width);
  auto& tp = p.temporal;
  tp.w_q = sq();
  tp.w_k = sq();
  tp.w_v = sq();
  // Starts as an identity map; base training grows it.
  tp.w_o = Tensor::zeros({d, d});
  tp.norm_gamma = Tensor::full({d}, 1.0);
  tp.norm_beta = Tensor::zeros({d});
  tp.positions = attention::sinusoidal_table(c.max_frames, d);
  tp.groups = c.groups;
  tp.use_positional_encoding = c.temporal_positions;
  return p;
}

struct Entry {
  std::string name;
  Tensor value;
  ParamRole role;
};

void push_res(std::vector<Entry>& out, const std::string& prefix, const ResBlockParams& p) {
  out.push_back({prefix + ".gn1.gamma", p.gn1_gamma, ParamRole::kFrozen});
  out.push_back({prefix + ".gn1.beta", p.gn1_beta, ParamRole::kFrozen});
  out.push_back({prefix + ".conv1", p.conv1, ParamRole::kFrozen});
  out.push_back({prefix + ".time_proj", p.time_proj, ParamRole::kFrozen});
  out.push_back({prefix + ".gn2.gamma", p.gn2_gamma, ParamRole::kFrozen});
  out.push_back({prefix + ".gn2.beta", p.gn2_beta, ParamRole::kFrozen});
  out.push_back({prefix + ".conv2", p.conv2, ParamRole::kFrozen});
  if (p.skip.defined()) out.push_back({prefix + ".skip", p.skip, ParamRole::kFrozen});
}

void push_attn(std::vector<Entry>& out, const AttnBlockParams& p) {
  const std::string& n = p.name;
  out.push_back({n + ".sa_norm.gamma", p.sa_gamma, ParamRole::kFrozen});
  out.push_back({n + ".sa_norm.beta", p.sa_beta, ParamRole::kFrozen});
  out.push_back({n + ".sa.w_q", p.sa.w_q, ParamRole::kFrozen});
  out.push_back({n + ".sa.w_k", p.sa.w_k, ParamRole::kFrozen});
  out.push_back({n + ".sa.w_v", p.sa.w_v, ParamRole::kFrozen});
  out.push_back({n + ".sa.w_o", p.sa.w_o, ParamRole::kFrozen});
  if (p.adapter) {
    out.push_back({n + ".adapter.wp_q", p.adapter->wp_q, ParamRole::kTrainable});
    out.push_back({n + ".adapter.wp_o", p.adapter->wp_o, ParamRole::kTrainable});
  }
  out.push_back({n + ".ca_norm.gamma", p.ca_gamma, ParamRole::kFrozen});
  out.push_back({n + ".ca_norm.beta", p.ca_beta, ParamRole::kFrozen});
  out.push_back({n + ".ca.wc_q", p.ca.wc_q, ParamRole::kFrozen});
  out.push_back({n + ".ca.wc_k", p.ca.wc_k, ParamRole::kFrozen});
  out.push_back({n + ".ca.wc_v", p.ca.wc_v, ParamRole::kFrozen});
  out.push_back({n + ".temporal.norm.gamma", p.temporal.norm_gamma, ParamRole::kFrozen});
  out.push_back({n + ".temporal.norm.beta", p.temporal.norm_beta, ParamRole::kFrozen});
  out.push_back({n + ".temporal.w_q", p.temporal.w_q, ParamRole::kFrozen});
  out.push_back({n + ".temporal.w_k", p.temporal.w_k, ParamRole::kFrozen});
  out.push_back({n + ".temporal.w_v", p.temporal.w_v, ParamRole::kFrozen});
  out.push_back({n + ".temporal.w_o", p.temporal.w_o, ParamRole::kFrozen});
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("model." + field + ": " + why);
}

bool wants_adapter(const ModelConfig& c, const std::string& block) {
  return c.adapter_blocks.empty() ||
         std::find(c.adapter_blocks.begin(), c.adapter_blocks.end(), block) != c.adapter_blocks.end();
}

}  // namespace

// ---- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  require(resolution > 0, "resolution", "must be positive");
  require(image_channels > 0, "image_channels", "must be positive");
  require(patch > 0, "patch", "must be positive");
  require(!stage_channels.empty(), "stage_channels", "needs at least one stage");
  require(groups > 0, "groups", "must be positive");
  for (std::size_t ch : stage_channels) {
    require(ch > 0, "stage_channels", "must be positive");
    require(ch % groups == 0, "stage_channels", "must be divisible by groups");
  }
  require(attention_width > 0, "attention_width", "must be positive");
  require(attention_width % groups == 0, "attention_width", "must be divisible by groups");
  require(stage_channels.back() == attention_width, "attention_width", "must equal the last stage width");
  const std::size_t factor = patch << stage_channels.size();
  require(resolution % factor == 0, "resolution",
          "must be divisible by " + std::to_string(factor) + " (patch times 2 per stage)");
  require(cond_width > 0, "cond_width", "must be positive");
  require(max_frames > 0, "max_frames", "must be positive");
  require(time_features > 0 && time_features % 2 == 0, "time_features", "must be positive and even");
  require(time_width > 0, "time_width", "must be positive");
  require(encoder_channels > 0, "encoder_channels", "must be positive");
  const std::size_t grid = isqrt_exact(image_tokens);
  require(image_tokens > 0 && grid > 0, "image_tokens", "must be a positive square");
  require(resolution % 4 == 0 && (resolution / 4) % grid == 0, "image_tokens",
          "token grid must divide resolution / 4");
  const std::vector<std::string> names = {"down" + std::to_string(stage_channels.size() - 1) + ".attn", "mid.attn",
                                          "up" + std::to_string(stage_channels.size() - 1) + ".attn"};
  for (const auto& b : adapter_blocks) {
    require(std::find(names.begin(), names.end(), b) != names.end(), "adapter_blocks",
            "unknown attention block '" + b + "'");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"resolution", resolution},
          {"image_channels", image_channels},
          {"patch", patch},
          {"stage_channels", stage_channels},
          {"attention_width", attention_width},
          {"cond_width", cond_width},
          {"max_frames", max_frames},
          {"groups", groups},
          {"image_tokens", image_tokens},
          {"time_features", time_features},
          {"time_width", time_width},
          {"encoder_channels", encoder_channels},
          {"temporal_positions", temporal_positions},
          {"adapter_blocks", adapter_blocks}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  j.at("resolution").get_to(c.resolution);
  j.at("image_channels").get_to(c.image_channels);
  j.at("patch").get_to(c.patch);
  j.at("stage_channels").get_to(c.stage_channels);
  j.at("attention_width").get_to(c.attention_width);
  j.at("cond_width").get_to(c.cond_width);
  j.at("max_frames").get_to(c.max_frames);
  j.at("groups").get_to(c.groups);
  j.at("image_tokens").get_to(c.image_tokens);
  j.at("time_features").get_to(c.time_features);
  j.at("time_width").get_to(c.time_width);
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("temporal_positions").get_to(c.temporal_positions);
  j.at("adapter_blocks").get_to(c.adapter_blocks);
  return c;
}

// ---- latents -----------------------------------------------------------------

Tensor VideoLatent::frame(std::size_t i) const {
  const Shape& s = frames.shape();
  return reshape(slice(frames, 0, i, i + 1), Shape(s.begin() + 1, s.end()));
}

VideoLatent assemble_i2v_input(const Tensor& clean_first, const std::vector<Tensor>& noised_rest) {
  if (noised_rest.empty()) throw ConfigError("assemble_i2v_input: I2V clips need at least 2 frames");
  std::vector<Tensor> parts;
  parts.reserve(noised_rest.size() + 1);
  Shape framed = clean_first.shape();
  framed.insert(framed.begin(), 1);
  parts.push_back(reshape(clean_first, framed));
  for (const Tensor& f : noised_rest) {
    if (f.shape() != clean_first.shape()) {
      throw DimensionError("assemble_i2v_input: frame shape " + shape_str(f.shape()) + " differs from " +
                           shape_str(clean_first.shape()));
    }
    parts.push_back(reshape(f, framed));
  }
  VideoLatent v{concat(parts, 0), std::vector<bool>(noised_rest.size() + 1, true)};
  v.frame_mask[0] = false;
  return v;
}

Tensor assemble_i2v_batch(const Tensor& clean, const Tensor& noised) {
  if (clean.shape() != noised.shape() || clean.rank() < 2) {
    throw DimensionError("assemble_i2v_batch: shapes " + shape_str(clean.shape()) + " and " +
                         shape_str(noised.shape()));
  }
  const std::size_t l = clean.dim(1);
  if (l < 2) throw ConfigError("assemble_i2v_batch: I2V clips need at least 2 frames");
  return concat({slice(clean, 1, 0, 1), slice(noised, 1, 1, l)}, 1);
}

Tensor ConditionEmbedding::tokens() const {
  return image_tokens ? concat({text_tokens, *image_tokens}, 0) : text_tokens;
}

// ---- helpers -----------------------------------------------------------------

Tensor space_to_depth(const Tensor& x, std::size_t f) {
  if (x.rank() != 4 || x.dim(2) % f != 0 || x.dim(3) % f != 0) {
    throw DimensionError("space_to_depth: cannot fold " + shape_str(x.shape()) + " by " + std::to_string(f));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / f, w = x.dim(3) / f;
  const Tensor t = permute(reshape(x, {n, c, h, f, w, f}), {0, 1, 3, 5, 2, 4});
  return reshape(t, {n, c * f * f, h, w});
}

Tensor depth_to_space(const Tensor& x, std::size_t f) {
  if (x.rank() != 4 || x.dim(1) % (f * f) != 0) {
    throw DimensionError("depth_to_space: cannot unfold " + shape_str(x.shape()) + " by " + std::to_string(f));
  }
  const std::size_t n = x.dim(0), c = x.dim(1) / (f * f), h = x.dim(2), w = x.dim(3);
  const Tensor t = permute(reshape(x, {n, c, f, f, h, w}), {0, 1, 4, 2, 5, 3});
  return reshape(t, {n, c, h * f, w * f});
}

Tensor timestep_features(std::span<const int> steps, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> out(steps.size() * width);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double a = static_cast<double>(steps[i]) * freq;
      out[i * width + k] = std::sin(a);
      out[i * width + half + k] = std::cos(a);
    }
  }
  return Tensor({steps.size(), width}, std::move(out));
}

// ---- model -------------------------------------------------------------------

VideoModel::VideoModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const ModelConfig& c = config_;
  Init init(seed);
  const std::size_t tw = c.time_width;

  time_w1_ = init.fan_in({c.time_features, tw}, c.time_features);
  time_b1_ = Tensor::zeros({tw});
  time_w2_ = init.fan_in({tw, tw}, tw);
  time_b2_ = Tensor::zeros({tw});
  text_table_ = init.normal({static_cast<std::size_t>(kVocabularySize), c.cond_width}, 1.0);

  const std::size_t ec = c.encoder_channels;
  enc_conv1_ = init.conv(ec, c.image_channels * 4, 3);
  enc_conv2_ = init.conv(2 * ec, 4 * ec, 1);
  enc_conv3_ = init.conv(2 * ec, 2 * ec, 3);
  enc_proj_ = init.fan_in({2 * ec, c.cond_width}, 2 * ec);
  {
    const std::size_t side = c.resolution / 4;
    const std::size_t grid = isqrt_exact(c.image_tokens);
    const std::size_t cell = side / grid;
    std::vector<double> pool(side * side * c.image_tokens, 0.0);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        pool[(y * side + x) * c.image_tokens + (y / cell) * grid + x / cell] = 1.0 / static_cast<double>(cell * cell);
      }
    }
    enc_pool_ = Tensor({side * side, c.image_tokens}, std::move(pool));
  }

  const std::size_t in_ch = c.image_channels * c.patch * c.patch;
  const auto& ch = c.stage_channels;
  const std::size_t stages = ch.size();
  conv_in_ = init.conv(ch[0], in_ch, 3);
  for (std::size_t s = 0; s < stages; ++s) {
    StageParams st;
    st.res = make_res(init, s == 0 ? ch[0] : ch[s - 1], ch[s], tw);
    if (s + 1 == stages) st.attn = make_attn(init, "down" + std::to_string(s) + ".attn", c);
    st.resample = init.conv(ch[s], 4 * ch[s], 1);
    down_.push_back(std::move(st));
  }
  mid_res_ = make_res(init, ch.back(), ch.back(), tw);
  mid_attn_ = make_attn(init, "mid.attn", c);
  up_.resize(stages);
  for (std::size_t s = stages; s-- > 0;) {
    StageParams& st = up_[s];
    const std::size_t below = s + 1 == stages ? ch.back() : ch[s + 1];
    st.resample = init.conv(4 * ch[s], below, 1);
    st.res = make_res(init, 2 * ch[s], ch[s], tw);
    if (s + 1 == stages) st.attn = make_attn(init, "up" + std::to_string(s) + ".attn", c);
  }
  out_gamma_ = Tensor::full({ch[0]}, 1.0);
  out_beta_ = Tensor::zeros({ch[0]});
  // Zero output layer: the untrained model predicts zero noise.
  conv_out_ = Tensor::zeros({in_ch, ch[0], 3, 3});
}

Tensor VideoModel::time_embedding(std::span<const int> steps) const {
  const Tensor f = timestep_features(steps, config_.time_features);
  const Tensor h = silu(add(matmul(f, time_w1_), time_b1_));
  return add(matmul(h, time_w2_), time_b2_);
}

Tensor VideoModel::res_block(const Tensor& x, const Tensor& temb, const ResBlockParams& p) const {
  const std::size_t g = config_.groups;
  const std::size_t n = x.dim(0);
  Tensor h = conv2d(silu(group_norm(x, g, p.gn1_gamma, p.gn1_beta)), p.conv1, 1);
  h = add(h, reshape(matmul(temb, p.time_proj), {n, p.conv1.dim(0), 1, 1}));
  h = conv2d(silu(group_norm(h, g, p.gn2_gamma, p.gn2_beta)), p.conv2, 1);
  const Tensor skip = p.skip.defined() ? conv2d(x, p.skip, 0) : x;
  return add(skip, h);
}

Tensor VideoModel::attn_block(const Tensor& x, std::size_t clips, std::size_t frames, std::span<const Tensor> conds,
                              const AttnBlockParams& p) const {
  const std::size_t n = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t t = h * w;
  const std::size_t g = config_.groups;
  Tensor tokens = permute(reshape(x, {n, d, t}), {0, 2, 1});

  const Tensor n1 = attention::group_norm_tokens(tokens, g, p.sa_gamma, p.sa_beta);
  const Tensor sa = attention::video_self_attention(reshape(n1, {clips, frames, t, d}), p.sa, p.adapter);
  tokens = add(tokens, reshape(sa, {n, t, d}));

  const Tensor n2 = reshape(attention::group_norm_tokens(tokens, g, p.ca_gamma, p.ca_beta), {clips, frames * t, d});
  std::vector<Tensor> parts;
  parts.reserve(clips);
  for (std::size_t c = 0; c < clips; ++c) {
    const Tensor q = reshape(slice(n2, 0, c, c + 1), {frames * t, d});
    parts.push_back(reshape(attention::cross_attention(q, conds[c], p.ca), {1, frames * t, d}));
  }
  tokens = add(tokens, reshape(concat(parts, 0), {n, t, d}));

  tokens = reshape(attention::temporal_attention(reshape(tokens, {clips, frames, t, d}), p.temporal), {n, t, d});
  return reshape(permute(tokens, {0, 2, 1}), {n, d, h, w});
}

Tensor VideoModel::forward(const Tensor& video, std::span<const int> steps, std::span<const Tensor> conds) const {
  const ModelConfig& c = config_;
  if (video.rank() != 5 || video.dim(2) != c.image_channels || video.dim(3) != c.resolution ||
      video.dim(4) != c.resolution) {
    throw DimensionError("forward: expected [clips, frames, " + std::to_string(c.image_channels) + ", " +
                         std::to_string(c.resolution) + ", " + std::to_string(c.resolution) + "], got " +
                         shape_str(video.shape()));
  }
  const std::size_t clips = video.dim(0), frames = video.dim(1);
  if (steps.size() != clips || conds.size() != clips) {
    throw DimensionError("forward: " + std::to_string(clips) + " clips but " + std::to_string(steps.size()) +
                         " step indices and " + std::to_string(conds.size()) + " conditions");
  }
  if (frames > c.max_frames) {
    throw ConfigError("forward: " + std::to_string(frames) + " frames exceed max_frames " +
                      std::to_string(c.max_frames));
  }
  for (const Tensor& cond : conds) {
    if (cond.rank() != 2 || cond.dim(1) != c.cond_width) {
      throw DimensionError("forward: condition must be [tokens, " + std::to_string(c.cond_width) + "], got " +
                           shape_str(cond.shape()));
    }
  }
  const std::size_t n = clips * frames;

  std::vector<int> frame_steps;
  frame_steps.reserve(n);
  for (std::size_t i = 0; i < clips; ++i) frame_steps.insert(frame_steps.end(), frames, steps[i]);
  const Tensor temb = silu(time_embedding(frame_steps));

  Tensor h = space_to_depth(reshape(video, {n, c.image_channels, c.resolution, c.resolution}), c.patch);
  h = conv2d(h, conv_in_, 1);
  std::vector<Tensor> skips;
  for (const StageParams& st : down_) {
    h = res_block(h, temb, st.res);
    if (st.attn) h = attn_block(h, clips, frames, conds, *st.attn);
    skips.push_back(h);
    h = conv2d(space_to_depth(h, 2), st.resample, 0);
  }
  h = res_block(h, temb, mid_res_);
  h = attn_block(h, clips, frames, conds, mid_attn_);
  for (std::size_t s = up_.size(); s-- > 0;) {
    const StageParams& st = up_[s];
    h = depth_to_space(conv2d(h, st.resample, 0), 2);
    h = res_block(concat({h, skips[s]}, 1), temb, st.res);
    if (st.attn) h = attn_block(h, clips, frames, conds, *st.attn);
  }
  h = conv2d(silu(group_norm(h, c.groups, out_gamma_, out_beta_)), conv_out_, 1);
  return reshape(depth_to_space(h, c.patch), video.shape());
}

Tensor VideoModel::predict_epsilon(const VideoLatent& v, int t, const ConditionEmbedding& cond) const {
  if (v.frames.rank() != 4) {
    throw DimensionError("predict_epsilon: expected [frames, c, h, w], got " + shape_str(v.frames.shape()));
  }
  Shape batched = v.frames.shape();
  batched.insert(batched.begin(), 1);
  const int steps[] = {t};
  const Tensor conds[] = {cond.tokens()};
  return reshape(forward(reshape(v.frames, batched), steps, conds), v.frames.shape());
}

Tensor VideoModel::encode_image_condition(const Tensor& image) const {
  const ModelConfig& c = config_;
  const bool single = image.rank() == 3;
  if ((image.rank() != 3 && image.rank() != 4) || image.shape()[image.rank() - 3] != c.image_channels ||
      image.shape()[image.rank() - 2] != c.resolution || image.shape().back() != c.resolution) {
    throw DimensionError("encode_image_condition: expected [" + std::to_string(c.image_channels) + ", " +
                         std::to_string(c.resolution) + ", " + std::to_string(c.resolution) + "] images, got " +
                         shape_str(image.shape()));
  }
  const std::size_t n = single ? 1 : image.dim(0);
  Tensor h = space_to_depth(reshape(image, {n, c.image_channels, c.resolution, c.resolution}), 2);
  h = silu(conv2d(h, enc_conv1_, 1));
  h = silu(conv2d(space_to_depth(h, 2), enc_conv2_, 0));
  h = conv2d(h, enc_conv3_, 1);
  const std::size_t ch = h.dim(1);
  const Tensor pooled = matmul(reshape(h, {n, ch, h.dim(2) * h.dim(3)}), enc_pool_);  // [n, ch, tokens]
  const Tensor tokens = matmul(permute(pooled, {0, 2, 1}), enc_proj_);
  return single ? reshape(tokens, {c.image_tokens, c.cond_width}) : tokens;
}

Tensor VideoModel::text_tokens(const std::vector<int>& caption) const {
  if (caption.empty()) throw ConfigError("text_tokens: empty caption");
  std::vector<Tensor> rows;
  rows.reserve(caption.size());
  for (int tok : caption) {
    if (tok < 0 || tok >= kVocabularySize) throw ConfigError("text_tokens: token " + std::to_string(tok) + " out of range");
    rows.push_back(slice(text_table_, 0, static_cast<std::size_t>(tok), static_cast<std::size_t>(tok) + 1));
  }
  return concat(rows, 0);
}

ConditionEmbedding VideoModel::condition(const std::vector<int>& caption, const std::optional<Tensor>& image) const {
  ConditionEmbedding e{text_tokens(caption), std::nullopt};
  if (image) e.image_tokens = encode_image_condition(*image);
  return e;
}

ConditionEmbedding VideoModel::unconditional() const { return {text_tokens({kNullToken}), std::nullopt}; }

std::vector<std::string> VideoModel::attention_block_names() const {
  std::vector<std::string> names;
  for (const auto& st : down_) {
    if (st.attn) names.push_back(st.attn->name);
  }
  names.push_back(mid_attn_.name);
  for (std::size_t s = up_.size(); s-- > 0;) {
    if (up_[s].attn) names.push_back(up_[s].attn->name);
  }
  return names;
}

void VideoModel::attach_adapters() {
  auto attach = [&](AttnBlockParams& b) {
    if (wants_adapter(config_, b.name)) b.adapter = attention::init_adapter(b.sa);
  };
  for (auto& st : down_) {
    if (st.attn) attach(*st.attn);
  }
  attach(mid_attn_);
  for (auto& st : up_) {
    if (st.attn) attach(*st.attn);
  }
  set_base_trainable(false);
}

bool VideoModel::has_adapters() const {
  for (const auto& p : parameters()) {
    if (p.role == ParamRole::kTrainable) return true;
  }
  return false;
}

VideoModel VideoModel::without_adapters() const {
  VideoModel m = *this;
  for (auto& st : m.down_) {
    if (st.attn) st.attn->adapter.reset();
  }
  m.mid_attn_.adapter.reset();
  for (auto& st : m.up_) {
    if (st.attn) st.attn->adapter.reset();
  }
  return m;
}

VideoModel VideoModel::clone() const {
  VideoModel m = *this;
  // Rebind every handle to fresh storage holding the same values.
  auto fresh = [](Tensor& t) {
    if (t.defined()) {
      const bool rg = t.requires_grad();
      t = t.clone();
      t.set_requires_grad(rg);
    }
  };
  auto fresh_res = [&](ResBlockParams& r) {
    for (Tensor* t : {&r.gn1_gamma, &r.gn1_beta, &r.conv1, &r.time_proj, &r.gn2_gamma, &r.gn2_beta, &r.conv2, &r.skip}) {
      fresh(*t);
    }
  };
  auto fresh_attn = [&](AttnBlockParams& a) {
    for (Tensor* t : {&a.sa_gamma, &a.sa_beta, &a.sa.w_q, &a.sa.w_k, &a.sa.w_v, &a.sa.w_o, &a.ca_gamma, &a.ca_beta,
                      &a.ca.wc_q, &a.ca.wc_k, &a.ca.wc_v, &a.temporal.w_q, &a.temporal.w_k, &a.temporal.w_v,
                      &a.temporal.w_o, &a.temporal.norm_gamma, &a.temporal.norm_beta}) {
      fresh(*t);
    }
    if (a.adapter) {
      fresh(a.adapter->wp_q);
      fresh(a.adapter->wp_o);
    }
  };
  for (Tensor* t : {&m.time_w1_, &m.time_b1_, &m.time_w2_, &m.time_b2_, &m.text_table_, &m.enc_conv1_, &m.enc_conv2_,
                    &m.enc_conv3_, &m.enc_proj_, &m.conv_in_, &m.out_gamma_, &m.out_beta_, &m.conv_out_}) {
    fresh(*t);
  }
  for (auto& st : m.down_) {
    fresh_res(st.res);
    fresh(st.resample);
    if (st.attn) fresh_attn(*st.attn);
  }
  fresh_res(m.mid_res_);
  fresh_attn(m.mid_attn_);
  for (auto& st : m.up_) {
    fresh_res(st.res);
    fresh(st.resample);
    if (st.attn) fresh_attn(*st.attn);
  }
  return m;
}

void VideoModel::set_base_trainable(bool flag) {
  for (auto& p : parameters()) {
    if (p.role == ParamRole::kFrozen) {
      p.value.set_requires_grad(flag);
      if (!flag) p.value.drop_grad();
    } else {
      p.value.set_requires_grad(true);
    }
  }
}

std::vector<NamedParameter> VideoModel::parameters() const {
  std::vector<Entry> e;
  e.push_back({"time.w1", time_w1_, ParamRole::kFrozen});
  e.push_back({"time.b1", time_b1_, ParamRole::kFrozen});
  e.push_back({"time.w2", time_w2_, ParamRole::kFrozen});
  e.push_back({"time.b2", time_b2_, ParamRole::kFrozen});
  e.push_back({"text.embedding", text_table_, ParamRole::kFrozen});
  e.push_back({"encoder.conv1", enc_conv1_, ParamRole::kFrozen});
  e.push_back({"encoder.conv2", enc_conv2_, ParamRole::kFrozen});
  e.push_back({"encoder.conv3", enc_conv3_, ParamRole::kFrozen});
  e.push_back({"encoder.proj", enc_proj_, ParamRole::kFrozen});
  e.push_back({"conv_in", conv_in_, ParamRole::kFrozen});
  for (std::size_t s = 0; s < down_.size(); ++s) {
    const std::string pre = "down" + std::to_string(s);
    push_res(e, pre + ".res", down_[s].res);
    if (down_[s].attn) push_attn(e, *down_[s].attn);
    e.push_back({pre + ".downsample", down_[s].resample, ParamRole::kFrozen});
  }
  push_res(e, "mid.res", mid_res_);
  push_attn(e, mid_attn_);
  for (std::size_t s = up_.size(); s-- > 0;) {
    const std::string pre = "up" + std::to_string(s);
    e.push_back({pre + ".upsample", up_[s].resample, ParamRole::kFrozen});
    push_res(e, pre + ".res", up_[s].res);
    if (up_[s].attn) push_attn(e, *up_[s].attn);
  }
  e.push_back({"out.norm.gamma", out_gamma_, ParamRole::kFrozen});
  e.push_back({"out.norm.beta", out_beta_, ParamRole::kFrozen});
  e.push_back({"conv_out", conv_out_, ParamRole::kFrozen});

  std::vector<NamedParameter> out;
  out.reserve(e.size());
  for (auto& x : e) out.push_back({std::move(x.name), x.value, x.role});
  return out;
}

std::vector<Tensor> VideoModel::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters()) {
    if (p.value.requires_grad()) out.push_back(p.value);
  }
  return out;
}

void VideoModel::load_values(const std::map<std::string, Tensor>& values, bool require_all) {
  std::size_t used = 0;
  for (auto& p : parameters()) {
    auto it = values.find(p.name);
    if (it == values.end()) {
      if (require_all) throw StructuralError("missing parameter '" + p.name + "'");
      continue;
    }
    if (it->second.shape() != p.value.shape()) {
      throw DimensionError("parameter '" + p.name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                           shape_str(p.value.shape()));
    }
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), p.value.mutable_data().begin());
    ++used;
  }
  if (used != values.size()) throw StructuralError("entries do not match any model parameter");
}

ParameterPartition partition_parameters(const VideoModel& model) {
  ParameterPartition part;
  for (const auto& p : model.parameters()) {
    if (p.role == ParamRole::kTrainable) {
      part.trainable.push_back(p.name);
      part.trainable_count += p.value.numel();
    } else {
      part.frozen.push_back(p.name);
      part.frozen_count += p.value.numel();
    }
  }
  return part;
}

}  // namespace i2v::model
