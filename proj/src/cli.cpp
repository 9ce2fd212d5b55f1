#include "i2v/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "i2v/checkpoint.hpp"
#include "i2v/config.hpp"
#include "i2v/dataset.hpp"
#include "i2v/errors.hpp"
#include "i2v/evaluation.hpp"
#include "i2v/io.hpp"
#include "i2v/parallel.hpp"
#include "i2v/sampler.hpp"
#include "i2v/training.hpp"
#include "i2v/vocabulary.hpp"

namespace i2v::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  config::RunConfig cfg;
  std::ostream& out;

  fs::path root() const { return cfg.get<std::string>("paths.root"); }
  fs::path path_or(const std::string& key, const fs::path& fallback) const {
    const auto p = cfg.get<std::string>(key);
    return p.empty() ? root() / fallback : fs::path(p);
  }
  fs::path dataset() const { return path_or("paths.dataset", fs::path("data") / "dataset.bin"); }
  fs::path base_checkpoint() const { return path_or("paths.base_checkpoint", fs::path("base") / "checkpoint.bin"); }
  fs::path i2v_checkpoint() const { return path_or("paths.i2v_checkpoint", fs::path("i2v") / "checkpoint.bin"); }
  fs::path samples() const { return path_or("paths.samples", "sample"); }
};

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingArtifact(what + " not found: " + p.string());
}

json manifest(const Context& c, const std::string& command) {
  return {{"command", command}, {"config", c.cfg.values()}, {"config_hash", c.cfg.hash()}, {"seed", c.cfg.seed()}};
}

void write_manifest(const fs::path& dir, const json& m) { io::write_json(dir / "manifest.json", m); }

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

void check_clip_shape(const Context& c, const model::ModelConfig& mc, const std::vector<training::SyntheticClip>& clips) {
  const Shape want{c.cfg.get<std::size_t>("data.frames"), mc.image_channels, mc.resolution, mc.resolution};
  if (clips.front().frames.shape() != want) {
    throw ConfigError("data.frames: dataset clips are " + shape_str(clips.front().frames.shape()) + " but the run expects " +
                      shape_str(want));
  }
}

training::StepCallback progress(std::ostream& out, int steps) {
  const int every = std::max(1, steps / 20);
  return [&out, every, steps](const training::StepRecord& r) {
    if ((r.step + 1) % every == 0 || r.step + 1 == steps) out << "step " << r.step + 1 << "/" << steps << " loss " << r.loss << '\n';
  };
}

void write_history(const fs::path& path, const training::StageResult& r) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,loss,frozen_grad_norm\n";
  f.precision(17);
  for (const auto& h : r.history) f << h.step << ',' << h.loss << ',' << h.frozen_grad_norm << '\n';
}

std::vector<training::SyntheticClip> heldout(const Context& c, const model::ModelConfig& mc) {
  return training::generate_dataset(c.cfg.get<std::size_t>("data.heldout_clips"), c.cfg.get<std::size_t>("data.frames"),
                                    mc.resolution, mc.resolution, c.cfg.derived_seed("heldout"));
}

// ---- commands ---------------------------------------------------------------

void gen_data(const Context& c) {
  const model::ModelConfig mc = c.cfg.model();
  const std::uint64_t seed = c.cfg.derived_seed("data");
  const auto clips = training::generate_dataset(c.cfg.get<std::size_t>("data.clips"), c.cfg.get<std::size_t>("data.frames"),
                                                mc.resolution, mc.resolution, seed);
  const fs::path path = c.dataset();
  training::save_dataset(clips, path);
  json m = manifest(c, "gen-data");
  m["seeds"] = {{"data", seed}};
  m["files"] = {path.filename().string()};
  m["hashes"] = {{path.filename().string(), model::file_digest(path)}};
  write_manifest(parent_or_cwd(path), m);
  c.out << "wrote " << clips.size() << " clips to " << path.string() << '\n';
}

void train_base(const Context& c) {
  require_exists(c.dataset(), "dataset cache");
  const auto clips = training::load_dataset(c.dataset());
  const model::ModelConfig mc = c.cfg.model();
  check_clip_shape(c, mc, clips);
  const std::uint64_t init_seed = c.cfg.derived_seed("model");
  model::VideoModel m(mc, init_seed);
  const training::StageOptions opt = c.cfg.base_stage();
  const auto result = training::train_base_stage(m, clips, c.cfg.schedule(), opt, progress(c.out, opt.steps));
  const fs::path path = c.base_checkpoint(), dir = parent_or_cwd(path);
  model::save_checkpoint(m, path, {{"stage", "base"}, {"config_hash", c.cfg.hash()}, {"seed", c.cfg.seed()}});
  write_history(dir / "history.csv", result);
  json man = manifest(c, "train-base");
  man["seeds"] = {{"model_init", init_seed}, {"train", opt.seed}};
  man["files"] = {path.filename().string(), "history.csv"};
  man["hashes"] = {{"dataset", model::file_digest(c.dataset())}, {"base_checkpoint", model::file_digest(path)}};
  man["loss"] = {{"first", result.first_loss()}, {"last", result.last_loss()}};
  write_manifest(dir, man);
  c.out << "base checkpoint " << path.string() << " (" << model::file_digest(path) << ")\n";
}

void train_i2v(const Context& c) {
  require_exists(c.dataset(), "dataset cache");
  require_exists(c.base_checkpoint(), "base checkpoint");
  const auto clips = training::load_dataset(c.dataset());
  model::VideoModel m = model::load_model(c.base_checkpoint());
  if (m.has_adapters()) throw ConfigError("paths.base_checkpoint: checkpoint already carries adapters");
  check_clip_shape(c, m.config(), clips);
  m.attach_adapters();
  const training::Snapshot before = training::snapshot_frozen(m);
  const training::StageOptions opt = c.cfg.i2v_stage();
  const auto result = training::train_i2v_stage(m, clips, c.cfg.schedule(), opt, progress(c.out, opt.steps));
  const training::FreezeCheck check = training::verify_freeze(before, training::snapshot_frozen(m));
  if (!check.unchanged) throw InvariantViolation("frozen parameter changed during I2V training: " + check.first_difference);
  const fs::path path = c.i2v_checkpoint(), dir = parent_or_cwd(path);
  const std::string base_hash = model::file_digest(c.base_checkpoint());
  model::save_checkpoint(m, path, {{"stage", "i2v"}, {"base_checkpoint_hash", base_hash}, {"config_hash", c.cfg.hash()}});
  write_history(dir / "history.csv", result);
  json man = manifest(c, "train-i2v");
  man["seeds"] = {{"train", opt.seed}};
  man["files"] = {path.filename().string(), "history.csv"};
  man["hashes"] = {{"dataset", model::file_digest(c.dataset())},
                   {"base_checkpoint", base_hash},
                   {"i2v_checkpoint", model::file_digest(path)}};
  man["loss"] = {{"first", result.first_loss()}, {"last", result.last_loss()}};
  man["frozen_unchanged"] = check.unchanged;
  write_manifest(dir, man);
  c.out << "adapter checkpoint " << path.string() << " (" << model::file_digest(path) << ")\n";
}

struct Reference {
  Tensor image;  // image space
  std::vector<int> caption;
  std::string source;
};

void sample(const Context& c) {
  require_exists(c.base_checkpoint(), "base checkpoint");
  model::VideoModel m = model::load_model(c.base_checkpoint());
  json hashes = {{"base_checkpoint", model::file_digest(c.base_checkpoint())}};
  if (c.cfg.get<std::string>("sample.checkpoint") == "i2v") {
    require_exists(c.i2v_checkpoint(), "adapter checkpoint");
    if (!m.has_adapters()) m.attach_adapters();
    model::load_adapters(m, model::read_checkpoint(c.i2v_checkpoint()));
    hashes["i2v_checkpoint"] = model::file_digest(c.i2v_checkpoint());
  }
  const model::ModelConfig& mc = m.config();
  const auto caption_words = c.cfg.get<std::string>("sample.caption");
  std::optional<std::vector<int>> caption;
  if (!caption_words.empty()) caption = parse_caption(caption_words);

  std::vector<Reference> refs;
  const auto ref_path = c.cfg.get<std::string>("sample.reference");
  if (!ref_path.empty()) {
    require_exists(ref_path, "reference image");
    Tensor img = io::read_ppm(ref_path);
    if (img.dim(1) != mc.resolution || img.dim(2) != mc.resolution) {
      throw ConfigError("sample.reference: image is " + shape_str(img.shape()) + ", model resolution is " +
                        std::to_string(mc.resolution));
    }
    if (!caption) throw ConfigError("sample.caption: required together with sample.reference");
    refs.push_back({std::move(img), *caption, ref_path});
  } else {
    const auto count = c.cfg.get<std::size_t>("sample.count");
    if (count > c.cfg.get<std::size_t>("data.heldout_clips")) {
      throw ConfigError("sample.count: exceeds data.heldout_clips");
    }
    const auto clips = heldout(c, mc);
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor& f = clips[i].frames;
      const auto n = f.numel() / f.dim(0);
      Tensor first({f.dim(1), f.dim(2), f.dim(3)}, std::vector<double>(f.data().begin(), f.data().begin() + static_cast<std::ptrdiff_t>(n)));
      refs.push_back({std::move(first), caption.value_or(clips[i].caption), "heldout:" + std::to_string(i)});
    }
  }

  const auto schedule = c.cfg.schedule();
  const auto opts = c.cfg.sampler();
  const prior::DegradationParams dp = c.cfg.degradation();
  const std::uint64_t base_seed = c.cfg.derived_seed("sample");
  std::vector<Tensor> videos(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    sampling::SampleRequest req;
    req.reference = eval::to_model_space(refs[i].image);
    req.caption = refs[i].caption;
    req.image_tokens = c.cfg.get<bool>("sample.image_tokens");
    req.frames = c.cfg.get<std::size_t>("data.frames");
    req.prior = dp;
    req.seed = base_seed + i;
    videos[i] = eval::to_image(sampling::sample_video(m, schedule, req, opts));
  });

  const fs::path dir = c.samples();
  json entries = json::array();
  for (std::size_t i = 0; i < videos.size(); ++i) {
    char sub[32];
    std::snprintf(sub, sizeof sub, "video_%04zu", i + 1);
    const fs::path vdir = videos.size() == 1 ? dir : dir / sub;
    json files = json::array();
    const std::size_t l = videos[i].dim(0), n = videos[i].numel() / l;
    for (std::size_t f = 0; f < l; ++f) {
      const auto d = videos[i].data().subspan(f * n, n);
      io::write_ppm(vdir / io::frame_filename(f),
                    Tensor({3, videos[i].dim(2), videos[i].dim(3)}, std::vector<double>(d.begin(), d.end())));
      files.push_back(io::frame_filename(f));
    }
    entries.push_back({{"dir", videos.size() == 1 ? "." : sub},
                       {"files", files},
                       {"caption", caption_text(refs[i].caption)},
                       {"caption_tokens", refs[i].caption},
                       {"reference", refs[i].source},
                       {"seed", base_seed + i}});
  }
  json man = manifest(c, "sample");
  man["videos"] = entries;
  man["files"] = entries.size() == 1 ? entries[0]["files"] : json::array();
  man["caption"] = entries[0]["caption"];
  man["seeds"] = {{"sample", base_seed}, {"mask", dp.mask_seed}};
  man["t0"] = dp.t0;
  man["p"] = dp.p;
  man["w"] = opts.guidance;
  man["blur_sigma"] = dp.blur_sigma;
  man["start_step"] = dp.start_step(schedule.steps);
  man["hashes"] = hashes;
  write_manifest(dir, man);
  c.out << "wrote " << videos.size() << " video(s) to " << dir.string() << '\n';
}

void evaluate(const Context& c) {
  const fs::path dir = c.samples();
  require_exists(dir / "manifest.json", "sample manifest");
  require_exists(c.base_checkpoint(), "base checkpoint");
  const json sm = io::read_json(dir / "manifest.json");
  const model::VideoModel m = model::load_model(c.base_checkpoint());
  model::VideoModel with_adapters = m.clone();
  if (!with_adapters.has_adapters()) with_adapters.attach_adapters();
  const double fraction = model::partition_parameters(with_adapters).fraction();

  std::vector<Tensor> videos;
  for (const auto& v : sm.at("videos")) {
    std::vector<double> d;
    std::size_t h = 0, w = 0, l = 0;
    for (const auto& f : v.at("files")) {
      const Tensor img = io::read_ppm(dir / v.at("dir").get<std::string>() / f.get<std::string>());
      h = img.dim(1);
      w = img.dim(2);
      d.insert(d.end(), img.data().begin(), img.data().end());
      ++l;
    }
    videos.emplace_back(Shape{l, 3, h, w}, std::move(d));
  }
  const eval::MetricReport r = eval::evaluate_videos(videos, eval::content_embedder(m), fraction, c.cfg.flow());
  json j = eval::to_json(r, c.cfg.hash(), c.cfg.seed());
  j["videos"] = videos.size();
  const fs::path out_dir = c.root() / "eval";
  io::write_json(out_dir / "metrics.json", j);
  json man = manifest(c, "eval");
  man["files"] = {"metrics.json"};
  man["hashes"] = {{"sample_manifest", model::file_digest(dir / "manifest.json")},
                   {"base_checkpoint", model::file_digest(c.base_checkpoint())}};
  write_manifest(out_dir, man);
  c.out << j.dump(2) << '\n';
}

void params(const Context& c) {
  model::VideoModel m(c.cfg.model(), c.cfg.derived_seed("model"));
  m.attach_adapters();
  const model::ParameterPartition p = model::partition_parameters(m);
  const auto& mc = m.config();
  std::size_t hosts = 0;
  for (const auto& name : m.attention_block_names()) {
    const auto& want = mc.adapter_blocks;
    if (want.empty() || std::find(want.begin(), want.end(), name) != want.end()) ++hosts;
  }
  const std::size_t analytic = hosts * 2 * mc.attention_width * mc.attention_width;
  json j = {{"frozen", p.frozen_count},
            {"trainable", p.trainable_count},
            {"total", p.frozen_count + p.trainable_count},
            {"trainable_fraction", p.fraction()},
            {"adapter_layers", hosts},
            {"analytic_trainable", analytic},
            {"analytic_formula", "adapter_layers * 2 * attention_width^2"},
            {"reference_scale_note",
             "large-scale adapter setups report about 22M trainable parameters, roughly 1% of the model; "
             "not reproduced at this scale"}};
  c.out << "frozen     " << p.frozen_count << "\ntrainable  " << p.trainable_count << "\nfraction   " << p.fraction()
        << "\nanalytic   " << analytic << " = " << hosts << " x 2 x " << mc.attention_width << "^2\n";
  const fs::path dir = c.root() / "params";
  io::write_json(dir / "params.json", j);
  json man = manifest(c, "params");
  man["files"] = {"params.json"};
  man["seeds"] = {{"model_init", c.cfg.derived_seed("model")}};
  write_manifest(dir, man);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image-to-video diffusion lab"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config with flat keys");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed (run.seed)");
  app.add_option("--out", out_dir, "workspace directory (paths.root)");
  app.add_option("--set", overrides, "key=value override, repeatable")->take_all()->expected(1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate the synthetic clip dataset"},
      {"train-base", "train the text-to-video base"},
      {"train-i2v", "train adapters on the frozen base"},
      {"sample", "sample first-frame-conditioned videos"},
      {"eval", "score sampled videos"},
      {"params", "report the frozen/trainable partition"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    worker_threads();  // validates I2V_LAB_THREADS early
    config::RunConfig cfg = config_path.empty() ? config::RunConfig() : config::RunConfig::from_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (seed_opt->count() > 0) cfg.set("run.seed", seed);
    if (!out_dir.empty()) cfg.set("paths.root", out_dir);
    cfg.validate();
    out << "command " << command << "\nseed " << cfg.seed() << "\nconfig " << cfg.hash() << '\n'
        << cfg.values().dump(2) << '\n';
    const Context ctx{cfg, out};
    if (command == "gen-data") gen_data(ctx);
    else if (command == "train-base") train_base(ctx);
    else if (command == "train-i2v") train_i2v(ctx);
    else if (command == "sample") sample(ctx);
    else if (command == "eval") evaluate(ctx);
    else params(ctx);
    return kOk;
  } catch (const MissingArtifact& e) {
    err << "missing input: " << e.what() << '\n';
    return kMissingCheckpoint;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const TrainingError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace i2v::cli
