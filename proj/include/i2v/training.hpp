#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "i2v/dataset.hpp"
#include "i2v/diffusion.hpp"
#include "i2v/video_model.hpp"

namespace i2v::training {

/// AdamW with decoupled weight decay over a fixed list of parameters.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(std::vector<Tensor> params, Options opt);

  // Applies one update from the accumulated gradients; parameters without a
  // gradient this step are left untouched.
  void step();
  void zero_grad();

  long steps() const { return step_; }
  const Options& options() const { return opt_; }
  std::size_t state_count() const { return params_.size(); }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

enum class CondKind { kUnconditional, kText, kTextImage };

/// Draws the conditioning used for one training clip: unconditional with
/// probability `dropout`, otherwise text, with image tokens added with
/// probability `image_prob`.
struct ConditionSampler {
  double dropout = 0.1;
  double image_prob = 0.5;

  CondKind draw(std::mt19937_64& rng) const;
};

struct StageOptions {
  int steps = 2000;
  std::size_t batch = 4;
  AdamW::Options optim;
  ConditionSampler cond;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double frozen_grad_norm = 0.0;
};

struct StageResult {
  std::vector<StepRecord> history;
  double first_loss() const { return history.front().loss; }
  double last_loss() const { return history.back().loss; }
};

using StepCallback = std::function<void(const StepRecord&)>;

// Model-space video (2x - 1) of the given clips, [b, l, 3, h, w].
Tensor clips_to_video(const std::vector<const SyntheticClip*>& clips);

Tensor condition_tokens(const model::VideoModel& model, const SyntheticClip& clip, CondKind kind);

/// Text-to-video stage: every frame noised, loss on every frame, all base
/// parameters trained, no adapters.
StageResult train_base_stage(model::VideoModel& model, const std::vector<SyntheticClip>& data,
                             const diffusion::NoiseSchedule& schedule, const StageOptions& opt,
                             const StepCallback& on_step = {});

/// Adapter stage: frame 0 clean, loss on frames 1.., only adapter parameters
/// updated. Throws InvariantViolation if a gradient reaches the frozen set.
StageResult train_i2v_stage(model::VideoModel& model, const std::vector<SyntheticClip>& data,
                            const diffusion::NoiseSchedule& schedule, const StageOptions& opt,
                            const StepCallback& on_step = {});

/// Fixed evaluation batch: every clip gets a stratified step index and seeded
/// noise, so repeated calls measure the same quantity.
struct EvalBatch {
  Tensor clean;  // [n, l, 3, h, w], model space
  Tensor noise;
  std::vector<int> steps;
  std::vector<Tensor> conds;
};

EvalBatch make_eval_batch(const model::VideoModel& model, const std::vector<SyntheticClip>& clips,
                          const diffusion::NoiseSchedule& schedule, CondKind cond, std::uint64_t seed);

// Epsilon loss on the batch; with i2v the first frame is clean and excluded.
double evaluate_loss(const model::VideoModel& model, const EvalBatch& batch, const diffusion::NoiseSchedule& schedule,
                     bool i2v, std::size_t chunk = 4);

using Snapshot = std::map<std::string, std::vector<double>>;

// Copies of every frozen-partition parameter.
Snapshot snapshot_frozen(const model::VideoModel& model);

struct FreezeCheck {
  bool unchanged = true;
  std::string first_difference;
};

// Bitwise comparison; StructuralError when the parameter sets differ.
FreezeCheck verify_freeze(const Snapshot& before, const Snapshot& after);

}  // namespace i2v::training
