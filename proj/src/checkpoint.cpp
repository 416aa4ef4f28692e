#include "rrwkv/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

#include "rrwkv/errors.hpp"

namespace rrwkv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host doubles as little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'R', 'R', 'W', 'K', 'V', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void read(void* dst, std::size_t n, const char* field) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(what_ + ": truncated while reading " + field + " at byte " +
                        std::to_string(offset_));
    }
    offset_ += n;
  }
  template <typename T>
  T get(const char* field) {
    T v;
    read(&v, sizeof(T), field);
    return v;
  }
  std::uint64_t offset() const { return offset_; }
  [[noreturn]] void fail(const std::string& msg, std::uint64_t at) const {
    throw FormatError(what_ + ": " + msg + " at byte " + std::to_string(at));
  }

 private:
  std::istream& is_;
  std::string what_;
  std::uint64_t offset_ = 0;
};

}  // namespace

const Tensor& CheckpointData::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool CheckpointData::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const auto& nt) { return nt.first == name; });
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : data.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const json manifest{{"config", json::parse(data.config_json)},
                      {"iteration", data.iteration},
                      {"seed", data.seed},
                      {"fused", data.fused},
                      {"tensors", entries}};
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, CheckpointData::kVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : data.tensors) {
    const auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(is, "checkpoint " + path.string());

  char magic[8];
  r.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != CheckpointData::kVersion)
    r.fail("unsupported version " + std::to_string(version), 8);
  const auto length = r.get<std::uint64_t>("manifest length");
  if (length > (1ull << 30)) r.fail("implausible manifest length", 12);
  const std::uint64_t manifest_at = r.offset();
  std::string text(length, '\0');
  r.read(text.data(), length, "manifest");

  CheckpointData out;
  std::vector<std::pair<std::string, std::pair<Shape, std::uint64_t>>> layout;
  try {
    const json m = json::parse(text);
    out.config_json = m.at("config").dump();
    out.iteration = m.at("iteration").get<std::uint64_t>();
    out.seed = m.at("seed").get<std::uint64_t>();
    out.fused = m.at("fused").get<bool>();
    for (const auto& e : m.at("tensors"))
      layout.push_back({e.at("name").get<std::string>(),
                        {e.at("shape").get<Shape>(), e.at("offset").get<std::uint64_t>()}});
  } catch (const json::exception& e) {
    r.fail(std::string("malformed manifest (") + e.what() + ")", manifest_at);
  }

  std::uint64_t expected = 0;
  for (const auto& [name, entry] : layout) {
    const auto& [shape, offset] = entry;
    if (offset != expected) r.fail("tensor '" + name + "' has non-contiguous offset", r.offset());
    std::vector<double> values(shape_numel(shape));
    r.read(values.data(), values.size() * sizeof(double), "tensor data");
    out.tensors.emplace_back(name, Tensor(shape, std::move(values)));
    expected += shape_numel(shape);
  }
  if (is.peek() != std::ifstream::traits_type::eof())
    r.fail("trailing bytes after tensor data", r.offset());
  return out;
}

CheckpointData snapshot(const Model& model, std::uint64_t iteration, std::uint64_t seed) {
  CheckpointData d;
  d.config_json = model.config().to_json();
  d.iteration = iteration;
  d.seed = seed;
  d.fused = model.fused();
  for (const auto& [name, t] : model.parameters()) d.tensors.emplace_back(name, t.detach());
  return d;
}

void load_weights(const CheckpointData& data, Model& model) {
  for (auto& [name, t] : model.parameters()) {
    const Tensor& src = data.at(name);
    if (src.shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

Model restore_model(const CheckpointData& data) {
  Model m = Model::build(ModelConfig::from_json(data.config_json), data.seed);
  load_weights(data, m);
  if (data.fused) m.fuse();
  return m;
}

}  // namespace rrwkv
