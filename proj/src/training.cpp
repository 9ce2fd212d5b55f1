#include "i2v/training.hpp"

#include <cmath>
#include <cstring>

#include "i2v/errors.hpp"

namespace i2v::training {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// x_t = alpha[t] x0 + sigma[t] eps with one step index per clip.
Tensor noise_clips(const Tensor& x0, const Tensor& eps, const std::vector<int>& steps,
                   const diffusion::NoiseSchedule& s) {
  const std::size_t per = x0.numel() / x0.dim(0);
  auto x = x0.data();
  auto e = eps.data();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < steps.size(); ++b) {
    const double a = s.alpha[steps[b]], sg = s.sigma[steps[b]];
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x[i] + sg * e[i];
  }
  return Tensor(x0.shape(), std::move(out));
}

double grad_norm_sq(const Tensor& t) {
  double acc = 0.0;
  if (t.has_grad()) {
    for (double g : t.grad()) acc += g * g;
  }
  return acc;
}

void clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (const Tensor& p : params) total += grad_norm_sq(p);
  const double norm = std::sqrt(total);
  if (norm <= max_norm) return;
  const double k = max_norm / norm;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.impl()->grad) g *= k;
  }
}

struct Batch {
  Tensor clean, noise, noised;
  std::vector<int> steps;
  std::vector<Tensor> conds;
};

Batch draw_batch(const model::VideoModel& model, const std::vector<SyntheticClip>& data,
                 const diffusion::NoiseSchedule& schedule, const StageOptions& opt, std::mt19937_64& rng) {
  Batch b;
  std::vector<const SyntheticClip*> picked;
  for (std::size_t i = 0; i < opt.batch; ++i) {
    const SyntheticClip& clip = data[rng() % data.size()];
    picked.push_back(&clip);
    b.steps.push_back(1 + static_cast<int>(rng() % static_cast<std::uint64_t>(schedule.steps)));
    b.conds.push_back(condition_tokens(model, clip, opt.cond.draw(rng)));
  }
  b.clean = clips_to_video(picked);
  b.noise = Tensor::randn(b.clean.shape(), rng);
  b.noised = noise_clips(b.clean, b.noise, b.steps, schedule);
  return b;
}

void check_options(const std::vector<SyntheticClip>& data, const StageOptions& opt) {
  if (data.empty()) throw ConfigError("train: dataset is empty");
  if (opt.steps < 0) throw ConfigError("train.steps must be non-negative");
  if (opt.batch == 0) throw ConfigError("train.batch must be positive");
  if (!(opt.optim.lr > 0.0)) throw ConfigError("train.lr must be positive");
}

}  // namespace

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      w[i] -= opt_.lr * opt_.weight_decay * w[i];
      w[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.drop_grad();
}

// ---- conditioning -----------------------------------------------------------------

CondKind ConditionSampler::draw(std::mt19937_64& rng) const {
  if (uniform01(rng) < dropout) return CondKind::kUnconditional;
  return uniform01(rng) < image_prob ? CondKind::kTextImage : CondKind::kText;
}

Tensor clips_to_video(const std::vector<const SyntheticClip*>& clips) {
  std::vector<Tensor> parts;
  parts.reserve(clips.size());
  for (const SyntheticClip* c : clips) {
    if (c->frames.shape() != clips.front()->frames.shape()) throw DimensionError("clips differ in shape");
    std::vector<double> v(c->frames.numel());
    auto src = c->frames.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * src[i] - 1.0;
    Shape s = c->frames.shape();
    s.insert(s.begin(), 1);
    parts.push_back(Tensor(s, std::move(v)));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Tensor condition_tokens(const model::VideoModel& model, const SyntheticClip& clip, CondKind kind) {
  switch (kind) {
    case CondKind::kUnconditional:
      return model.unconditional().tokens();
    case CondKind::kText:
      return model.condition(clip.caption, std::nullopt).tokens();
    case CondKind::kTextImage: {
      const Tensor first = clips_to_video({&clip});
      const Shape& s = first.shape();
      return model.condition(clip.caption, reshape(slice(first, 1, 0, 1), {s[2], s[3], s[4]})).tokens();
    }
  }
  throw ConfigError("unknown condition kind");
}

// ---- stages ------------------------------------------------------------------

StageResult train_base_stage(model::VideoModel& model, const std::vector<SyntheticClip>& data,
                             const diffusion::NoiseSchedule& schedule, const StageOptions& opt,
                             const StepCallback& on_step) {
  check_options(data, opt);
  if (model.has_adapters()) throw ConfigError("train_base_stage: model already carries adapters");
  model.set_base_trainable(true);
  std::vector<Tensor> params = model.trainable_tensors();
  AdamW optim(params, opt.optim);
  std::mt19937_64 rng(opt.seed);
  const std::vector<bool> mask(data.front().frames.dim(0), true);
  StageResult result;
  for (int step = 0; step < opt.steps; ++step) {
    Tape tape;
    double loss_value = 0.0;
    {
      // Condition tokens are built under the tape so the text table and
      // content encoder train with the rest of the base.
      TapeScope scope(tape);
      Batch b = draw_batch(model, data, schedule, opt, rng);
      const Tensor loss = diffusion::epsilon_loss(model.forward(b.noised, b.steps, b.conds), b.noise, mask);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw TrainingError("base training diverged (loss " + std::to_string(loss_value) + ")", step);
      tape.backward(loss);
    }
    clip_gradients(params, opt.grad_clip);
    optim.step();
    optim.zero_grad();
    result.history.push_back({step, loss_value, 0.0});
    if (on_step) on_step(result.history.back());
  }
  model.set_base_trainable(false);
  return result;
}

StageResult train_i2v_stage(model::VideoModel& model, const std::vector<SyntheticClip>& data,
                            const diffusion::NoiseSchedule& schedule, const StageOptions& opt,
                            const StepCallback& on_step) {
  check_options(data, opt);
  if (!model.has_adapters()) throw ConfigError("train_i2v_stage: model has no adapters");
  const std::size_t frames = data.front().frames.dim(0);
  if (frames < 2) throw ConfigError("train_i2v_stage: clips need at least 2 frames");
  std::vector<Tensor> trainable;
  std::vector<model::NamedParameter> frozen;
  for (auto& p : model.parameters()) {
    if (p.role == model::ParamRole::kTrainable) {
      trainable.push_back(p.value);
    } else {
      frozen.push_back(p);
    }
  }
  AdamW optim(trainable, opt.optim);
  std::mt19937_64 rng(opt.seed);
  std::vector<bool> mask(frames, true);
  mask[0] = false;
  StageResult result;
  for (int step = 0; step < opt.steps; ++step) {
    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      Batch b = draw_batch(model, data, schedule, opt, rng);
      const Tensor input = model::assemble_i2v_batch(b.clean, b.noised);
      const Tensor loss = diffusion::epsilon_loss(model.forward(input, b.steps, b.conds), b.noise, mask);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw TrainingError("I2V training diverged (loss " + std::to_string(loss_value) + ")", step);
      tape.backward(loss);
    }
    double frozen_norm = 0.0;
    for (const auto& p : frozen) {
      if (p.value.has_grad()) {
        throw InvariantViolation("gradient reached frozen parameter '" + p.name + "' at step " + std::to_string(step));
      }
      frozen_norm += grad_norm_sq(p.value);
    }
    clip_gradients(trainable, opt.grad_clip);
    optim.step();
    optim.zero_grad();
    result.history.push_back({step, loss_value, std::sqrt(frozen_norm)});
    if (on_step) on_step(result.history.back());
  }
  return result;
}

// ---- evaluation batch ----------------------------------------------------------------

EvalBatch make_eval_batch(const model::VideoModel& model, const std::vector<SyntheticClip>& clips,
                          const diffusion::NoiseSchedule& schedule, CondKind cond, std::uint64_t seed) {
  if (clips.empty()) throw ConfigError("make_eval_batch: no clips");
  EvalBatch b;
  std::vector<const SyntheticClip*> ptrs;
  const std::size_t n = clips.size();
  for (std::size_t k = 0; k < n; ++k) {
    ptrs.push_back(&clips[k]);
    const double pos = (static_cast<double>(k) + 0.5) * schedule.steps / static_cast<double>(n);
    b.steps.push_back(std::min(schedule.steps, 1 + static_cast<int>(pos)));
    b.conds.push_back(condition_tokens(model, clips[k], cond));
  }
  b.clean = clips_to_video(ptrs);
  std::mt19937_64 rng(seed);
  b.noise = Tensor::randn(b.clean.shape(), rng);
  return b;
}

double evaluate_loss(const model::VideoModel& model, const EvalBatch& batch, const diffusion::NoiseSchedule& schedule,
                     bool i2v, std::size_t chunk) {
  const std::size_t n = batch.clean.dim(0);
  const std::size_t frames = batch.clean.dim(1);
  std::vector<bool> mask(frames, true);
  if (i2v) mask[0] = false;
  const Tensor noised = noise_clips(batch.clean, batch.noise, batch.steps, schedule);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    Tensor input = slice(noised, 0, start, end);
    if (i2v) input = model::assemble_i2v_batch(slice(batch.clean, 0, start, end), input);
    const std::span<const int> steps(batch.steps.data() + start, end - start);
    const std::span<const Tensor> conds(batch.conds.data() + start, end - start);
    const Tensor pred = model.forward(input, steps, conds);
    total += diffusion::epsilon_loss(pred, slice(batch.noise, 0, start, end), mask).item() *
             static_cast<double>(end - start);
  }
  return total / static_cast<double>(n);
}

// ---- freeze verification -------------------------------------------------------------

Snapshot snapshot_frozen(const model::VideoModel& model) {
  Snapshot s;
  for (const auto& p : model.parameters()) {
    if (p.role == model::ParamRole::kFrozen) {
      auto d = p.value.data();
      s.emplace(p.name, std::vector<double>(d.begin(), d.end()));
    }
  }
  return s;
}

FreezeCheck verify_freeze(const Snapshot& before, const Snapshot& after) {
  if (before.size() != after.size()) throw StructuralError("verify_freeze: snapshots hold different parameter sets");
  FreezeCheck check;
  for (const auto& [name, values] : before) {
    auto it = after.find(name);
    if (it == after.end()) throw StructuralError("verify_freeze: '" + name + "' missing from second snapshot");
    if (it->second.size() != values.size()) throw StructuralError("verify_freeze: '" + name + "' changed size");
    if (check.unchanged && std::memcmp(values.data(), it->second.data(), values.size() * sizeof(double)) != 0) {
      check.unchanged = false;
      check.first_difference = name;
    }
  }
  return check;
}

}  // namespace i2v::training
