#include "i2v/config.hpp"

#include <cstdio>
#include <fstream>

#include "i2v/errors.hpp"

namespace i2v::config {

namespace {

using json = nlohmann::json;

std::vector<FieldDoc> build_fields() {
  std::vector<FieldDoc> f = {
      {"run.seed", 0, "master seed; every stage seed is derived from it"},
      {"paths.root", "runs", "workspace; each command writes its own subdirectory"},
      {"paths.dataset", "", "dataset cache; empty = <root>/data/dataset.bin"},
      {"paths.base_checkpoint", "", "base checkpoint; empty = <root>/base/checkpoint.bin"},
      {"paths.i2v_checkpoint", "", "adapter checkpoint; empty = <root>/i2v/checkpoint.bin"},
      {"paths.samples", "", "sample directory read by eval; empty = <root>/sample"},
      {"diffusion.steps", 1000, "T, number of noise levels"},
      {"data.clips", 512, "training clips"},
      {"data.frames", 8, "frames per clip, also the sampled video length"},
      {"data.heldout_clips", 20, "held-out clips used as sampling references"},
  };
  const json model_defaults = model::ModelConfig{}.to_json();
  for (const auto& [k, v] : model_defaults.items()) {
    f.push_back({"model." + k, v, "architecture, see ModelConfig"});
  }
  auto stage = [&](const std::string& s, double lr, double wd, double image_prob, int steps) {
    f.push_back({s + ".steps", steps, "optimizer steps"});
    f.push_back({s + ".batch", 4, "clips per step"});
    f.push_back({s + ".lr", lr, "AdamW learning rate"});
    f.push_back({s + ".weight_decay", wd, "decoupled weight decay"});
    f.push_back({s + ".beta1", 0.9, "AdamW beta1"});
    f.push_back({s + ".beta2", 0.999, "AdamW beta2"});
    f.push_back({s + ".eps", 1e-8, "AdamW epsilon"});
    f.push_back({s + ".grad_clip", 1.0, "global gradient norm cap; 0 disables"});
    f.push_back({s + ".cond_dropout", 0.1, "probability of training on the null caption"});
    f.push_back({s + ".image_prob", image_prob, "probability of adding content tokens when conditioned"});
  };
  stage("train_base", 1e-3, 0.0, 0.5, 2000);
  stage("train_i2v", 1e-4, 1e-2, 1.0, 1000);
  const json more = json::array({
      json::array({"sampler.steps", 50, "denoising steps over the full schedule"}),
      json::array({"sampler.mode", "deterministic", "deterministic | ancestral"}),
      json::array({"sampler.guidance", 3.0, "classifier-free guidance weight w"}),
      json::array({"sampler.clip_x0", true, "clamp the x0 estimate to [-1, 1] at every sampling step"}),
      json::array({"prior.t0", 1.0, "start level as a fraction of T"}),
      json::array({"prior.p", 0.6, "probability a pixel keeps its original value"}),
      json::array({"prior.blur_sigma", 1.5, "Gaussian blur sigma in pixels"}),
      json::array({"prior.mask_seed", 0, "seed of the keep mask"}),
      json::array({"sample.checkpoint", "i2v", "i2v | base: which model the sample command uses"}),
      json::array({"sample.reference", "", "reference PPM; empty = first frames of held-out clips"}),
      json::array({"sample.caption", "", "caption words; empty = the held-out clip's caption"}),
      json::array({"sample.count", 1, "videos to sample (held-out references only)"}),
      json::array({"sample.image_tokens", true, "also condition on the reference via the content encoder"}),
      json::array({"eval.flow_iterations", 100, "Horn-Schunck iterations"}),
      json::array({"eval.flow_smoothness", 0.1, "Horn-Schunck alpha^2 on 0..255 intensities"}),
  });
  for (const auto& row : more) f.push_back({row[0].get<std::string>(), row[1], row[2].get<std::string>()});
  return f;
}

const FieldDoc* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_unsigned() || def.is_number_integer()) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }
  if (def.is_number_float()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    // Element kind follows the default's first element; empty defaults hold names.
    const bool numbers = !def.empty() && def.front().is_number();
    for (const auto& e : v) {
      if (numbers ? !e.is_number_unsigned() : !e.is_string()) return false;
    }
    return true;
  }
  return false;
}

std::string kind_name(const json& def) {
  if (def.is_boolean()) return "a boolean";
  if (def.is_number_integer() || def.is_number_unsigned()) return "a non-negative integer";
  if (def.is_number_float()) return "a number";
  if (def.is_string()) return "a string";
  if (!def.empty() && def.front().is_number()) return "an array of non-negative integers";
  return "an array of strings";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) throw ConfigError(key + ": " + why);
}

}  // namespace

const std::vector<FieldDoc>& fields() {
  static const std::vector<FieldDoc> f = build_fields();
  return f;
}

RunConfig::RunConfig() : values_(json::object()) {
  for (const auto& f : fields()) values_[f.key] = f.default_value;
}

RunConfig RunConfig::from_json(const json& flat) {
  if (!flat.is_object()) throw ConfigError("config: expected a JSON object of flat keys");
  RunConfig c;
  for (const auto& [k, v] : flat.items()) c.set(k, v);
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  return from_json(j);
}

void RunConfig::set(const std::string& key, const json& value) {
  const FieldDoc* f = find_field(key);
  if (f == nullptr) throw ConfigError(key + ": unknown configuration key");
  if (!same_kind(f->default_value, value)) throw ConfigError(key + ": expected " + kind_name(f->default_value));
  values_[key] = f->default_value.is_number_float() ? json(value.get<double>()) : value;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  const FieldDoc* f = find_field(key);
  // A bare word for a string field must stay a string even if it parses ("true", "1").
  if (f != nullptr && f->default_value.is_string()) v = text;
  set(key, v);
}

void RunConfig::validate() const {
  model::ModelConfig m = model();
  m.validate();
  require(get<int>("diffusion.steps") >= 2, "diffusion.steps", "must be at least 2");
  require(get<int>("data.clips") >= 1, "data.clips", "must be positive");
  require(get<int>("data.heldout_clips") >= 1, "data.heldout_clips", "must be positive");
  const auto frames = get<std::size_t>("data.frames");
  require(frames >= 2 && frames <= m.max_frames, "data.frames",
          "must be in [2, model.max_frames = " + std::to_string(m.max_frames) + "]");
  for (const std::string s : {"train_base", "train_i2v"}) {
    require(get<int>(s + ".batch") >= 1, s + ".batch", "must be positive");
    require(get<double>(s + ".lr") > 0.0, s + ".lr", "must be positive");
    require(get<double>(s + ".weight_decay") >= 0.0, s + ".weight_decay", "must be non-negative");
    for (const std::string b : {".beta1", ".beta2"}) {
      const double v = get<double>(s + b);
      require(v >= 0.0 && v < 1.0, s + b, "must be in [0, 1)");
    }
    require(get<double>(s + ".eps") > 0.0, s + ".eps", "must be positive");
    require(get<double>(s + ".grad_clip") >= 0.0, s + ".grad_clip", "must be non-negative");
    for (const std::string p : {".cond_dropout", ".image_prob"}) {
      const double v = get<double>(s + p);
      require(v >= 0.0 && v <= 1.0, s + p, "must be a probability");
    }
  }
  sampler().validate();
  const std::string mode = get<std::string>("sampler.mode");
  require(mode == "deterministic" || mode == "ancestral", "sampler.mode", "must be deterministic or ancestral");
  const prior::DegradationParams dp = degradation();
  require(dp.t0 > 0.0 && dp.t0 <= 1.0, "prior.t0", "must be in (0, 1]");
  require(dp.p >= 0.0 && dp.p <= 1.0, "prior.p", "must be in [0, 1]");
  require(dp.blur_sigma > 0.0, "prior.blur_sigma", "must be positive");
  require(static_cast<int>(dp.t0 * get<int>("diffusion.steps")) >= 1, "prior.t0",
          "floor(t0 * T) must be at least 1");
  const std::string which = get<std::string>("sample.checkpoint");
  require(which == "i2v" || which == "base", "sample.checkpoint", "must be i2v or base");
  require(get<int>("sample.count") >= 1, "sample.count", "must be positive");
  flow().validate();
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(values_.dump())));
  return buf;
}

std::uint64_t RunConfig::derived_seed(const std::string& purpose) const {
  return splitmix64(seed() ^ fnv1a(purpose));
}

model::ModelConfig RunConfig::model() const {
  json j = json::object();
  for (const auto& [k, v] : values_.items()) {
    if (k.rfind("model.", 0) == 0) j[k.substr(6)] = v;
  }
  try {
    return model::ModelConfig::from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

diffusion::NoiseSchedule RunConfig::schedule() const { return diffusion::make_vp_schedule(get<int>("diffusion.steps")); }

namespace {

training::StageOptions stage_options(const RunConfig& c, const std::string& s) {
  training::StageOptions o;
  o.steps = c.get<int>(s + ".steps");
  o.batch = c.get<std::size_t>(s + ".batch");
  o.optim.lr = c.get<double>(s + ".lr");
  o.optim.weight_decay = c.get<double>(s + ".weight_decay");
  o.optim.beta1 = c.get<double>(s + ".beta1");
  o.optim.beta2 = c.get<double>(s + ".beta2");
  o.optim.eps = c.get<double>(s + ".eps");
  o.grad_clip = c.get<double>(s + ".grad_clip");
  o.cond.dropout = c.get<double>(s + ".cond_dropout");
  o.cond.image_prob = c.get<double>(s + ".image_prob");
  o.seed = c.derived_seed(s);
  return o;
}

}  // namespace

training::StageOptions RunConfig::base_stage() const { return stage_options(*this, "train_base"); }
training::StageOptions RunConfig::i2v_stage() const { return stage_options(*this, "train_i2v"); }

sampling::SamplerOptions RunConfig::sampler() const {
  sampling::SamplerOptions o;
  o.steps = get<int>("sampler.steps");
  o.mode = get<std::string>("sampler.mode") == "ancestral" ? diffusion::SamplerMode::kAncestral
                                                            : diffusion::SamplerMode::kDeterministic;
  o.guidance = get<double>("sampler.guidance");
  o.clip_x0 = get<bool>("sampler.clip_x0");
  return o;
}

prior::DegradationParams RunConfig::degradation() const {
  prior::DegradationParams dp;
  dp.t0 = get<double>("prior.t0");
  dp.p = get<double>("prior.p");
  dp.blur_sigma = get<double>("prior.blur_sigma");
  dp.mask_seed = get<std::uint64_t>("prior.mask_seed");
  return dp;
}

eval::FlowOptions RunConfig::flow() const {
  return {get<int>("eval.flow_iterations"), get<double>("eval.flow_smoothness")};
}

}  // namespace i2v::config
