#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "i2v/diffusion.hpp"
#include "i2v/evaluation.hpp"
#include "i2v/sampler.hpp"
#include "i2v/similarity_prior.hpp"
#include "i2v/training.hpp"
#include "i2v/video_model.hpp"

namespace i2v::config {

struct FieldDoc {
  std::string key;
  nlohmann::json default_value;
  std::string doc;
};

// Every accepted key with its default, in display order.
const std::vector<FieldDoc>& fields();

/// Flat configuration with namespaced keys ("sampler.steps"). Values are
/// type-checked against the defaults; unknown keys are a ConfigError naming
/// the key.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& flat);

  void set(const std::string& key, const nlohmann::json& value);
  // "key=value"; value parsed as JSON, falling back to a plain string.
  void apply_override(const std::string& assignment);

  // Checks every section; ConfigError messages start with the field name.
  void validate() const;

  const nlohmann::json& values() const { return values_; }
  template <class T>
  T get(const std::string& key) const {
    return values_.at(key).get<T>();
  }

  // FNV-1a of the canonical dump, 16 hex digits.
  std::string hash() const;

  model::ModelConfig model() const;
  diffusion::NoiseSchedule schedule() const;
  training::StageOptions base_stage() const;
  training::StageOptions i2v_stage() const;
  sampling::SamplerOptions sampler() const;
  prior::DegradationParams degradation() const;
  eval::FlowOptions flow() const;

  // Seeds derived from run.seed so one flag pins a whole pipeline.
  std::uint64_t seed() const { return get<std::uint64_t>("run.seed"); }
  std::uint64_t derived_seed(const std::string& purpose) const;

 private:
  nlohmann::json values_;
};

}  // namespace i2v::config
