#include "i2v/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "i2v/errors.hpp"

namespace i2v::model {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'I', '2', 'V', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError("truncated checkpoint " + path.string());
  }
  return s;
}

}  // namespace

void save_checkpoint(const VideoModel& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["model"] = model.config().to_json();
  const std::string meta_text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.role));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put<std::uint64_t>(out, d);
    const auto data = p.value.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ck;
  const auto meta_len = get<std::uint32_t>(in, path);
  try {
    ck.metadata = nlohmann::json::parse(get_string(in, meta_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint metadata in " + path.string() + ": " + e.what());
  }
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
    const auto role = get<std::uint8_t>(in, path);
    if (role > 1) throw IoError("bad role byte for '" + name + "' in " + path.string());
    const auto rank = get<std::uint32_t>(in, path);
    if (rank == 0 || rank > 8) throw IoError("bad rank for '" + name + "' in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    std::vector<double> data(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw IoError("truncated checkpoint " + path.string());
    }
    ck.values.emplace(name, Tensor(shape, std::move(data)));
    ck.roles.emplace(name, static_cast<ParamRole>(role));
  }
  return ck;
}

VideoModel load_model(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (!ck.metadata.contains("model")) throw IoError("checkpoint lacks a model config: " + path.string());
  VideoModel model(ModelConfig::from_json(ck.metadata.at("model")), 0);
  bool adapters = false;
  for (const auto& [name, role] : ck.roles) adapters = adapters || role == ParamRole::kTrainable;
  if (adapters) model.attach_adapters();
  model.load_values(ck.values, true);
  return model;
}

void load_adapters(VideoModel& model, const Checkpoint& ckpt) {
  std::map<std::string, Tensor> trainable;
  for (const auto& [name, value] : ckpt.values) {
    if (ckpt.roles.at(name) == ParamRole::kTrainable) trainable.emplace(name, value);
  }
  if (trainable.empty()) throw StructuralError("checkpoint has no adapter entries");
  model.load_values(trainable, false);
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

}  // namespace i2v::model
