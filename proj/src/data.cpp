#include "rrwkv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "rrwkv/errors.hpp"
#include "rrwkv/rng.hpp"

namespace rrwkv {

namespace {

// Cursor over a PGM header: whitespace and '#' comments between tokens.
struct HeaderParser {
  const std::string& s;
  const std::string& what;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what + ": " + msg + " at byte " + std::to_string(pos));
  }

  void skip_space() {
    while (pos < s.size()) {
      if (s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* field) {
    skip_space();
    const std::size_t start = pos;
    unsigned long v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      v = v * 10 + static_cast<unsigned long>(s[pos] - '0');
      if (v > 1'000'000) fail(std::string(field) + " is too large");
      ++pos;
    }
    if (pos == start) fail(std::string("expected ") + field);
    return v;
  }
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Split parse_split(const std::string& s, const std::string& where) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError(where + ": unknown split '" + s + "' (expected train, val, test)");
}

}  // namespace

Tensor decode_pgm(const std::string& bytes, const std::string& what) {
  HeaderParser p{bytes, what};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    p.fail("unsupported magic (expected P5)");
  p.pos = 2;
  const auto width = p.number("width");
  const auto height = p.number("height");
  const auto maxval = p.number("maxval");
  if (width == 0 || height == 0) p.fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) p.fail("maxval must lie in 1..65535");
  if (p.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[p.pos])))
    p.fail("missing whitespace after maxval");
  ++p.pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t n = width * height;
  const std::size_t have = bytes.size() - p.pos;
  if (have < n * bps) {
    throw FormatError(what + ": truncated payload, expected " + std::to_string(n * bps) +
                      " bytes, got " + std::to_string(have) + " at byte " + std::to_string(p.pos));
  }
  std::vector<double> v(n);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + p.pos);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned sample = bps == 1 ? data[i] : (unsigned(data[2 * i]) << 8) | data[2 * i + 1];
    if (sample > maxval)
      throw FormatError(what + ": sample exceeds maxval at byte " +
                        std::to_string(p.pos + i * bps));
    v[i] = static_cast<double>(sample) / static_cast<double>(maxval);
  }
  return Tensor(Shape{height, width, 1}, std::move(v));
}

Tensor load_pgm(const std::filesystem::path& path) {
  return decode_pgm(read_file(path), path.string());
}

std::string encode_pgm(const Tensor& image, int bits) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw ShapeError("save_pgm: expected H x W x 1, got " + shape_str(image.shape()));
  if (bits != 8 && bits != 16) throw ConfigError("save_pgm: bits must be 8 or 16");
  const unsigned maxval = bits == 8 ? 255 : 65535;
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
                    "\n" + std::to_string(maxval) + "\n";
  for (double v : image.data()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (bits == 16) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

void save_pgm(const Tensor& image, const std::filesystem::path& path, int bits) {
  const std::string bytes = encode_pgm(image, bits);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<ImagePair> sample_patches(const ImagePair& pair, std::size_t size, std::size_t count,
                                      std::uint64_t seed) {
  if (pair.lq.shape() != pair.hq.shape())
    throw ShapeError("sample_patches: lq and hq shapes differ");
  const std::size_t H = pair.hq.dim(0), W = pair.hq.dim(1);
  if (size == 0 || size > std::min(H, W)) {
    throw ConfigError("patch size " + std::to_string(size) + " does not fit a " +
                      std::to_string(H) + "x" + std::to_string(W) + " image");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> oy(0, H - size), ox(0, W - size);
  auto cut = [&](const Tensor& img, std::size_t y0, std::size_t x0) {
    std::vector<double> v(size * size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) v[y * size + x] = img[(y0 + y) * W + x0 + x];
    return Tensor(Shape{size, size, 1}, std::move(v));
  };
  std::vector<ImagePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y0 = oy(rng), x0 = ox(rng);
    out.push_back({cut(pair.lq, y0, x0), cut(pair.hq, y0, x0),
                   pair.id + "@" + std::to_string(y0) + "," + std::to_string(x0)});
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3)
      throw FormatError(where + ": expected 3 tab-separated fields, got " +
                        std::to_string(fields.size()));
    std::filesystem::path hq = fields[1];
    if (hq.is_relative()) hq = path.parent_path() / hq;
    out.push_back({fields[0], hq, parse_split(fields[2], where)});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries)
    os << e.id << '\t' << e.hq_path.string() << '\t' << to_string(e.split) << '\n';
}

Tensor synth_phantom(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t, value;
  };
  std::vector<Ellipse> shapes;
  // A body outline, then a few interior structures of either sign.
  const double body_t = U(rng) * std::numbers::pi;
  shapes.push_back({0.5 + 0.05 * (U(rng) - 0.5), 0.5 + 0.05 * (U(rng) - 0.5),
                    0.36 + 0.08 * U(rng), 0.3 + 0.08 * U(rng), std::cos(body_t),
                    std::sin(body_t), 0.35 + 0.2 * U(rng)});
  const int n = 4 + static_cast<int>(U(rng) * 5);
  for (int i = 0; i < n; ++i) {
    const double t = U(rng) * std::numbers::pi;
    shapes.push_back({0.25 + 0.5 * U(rng), 0.25 + 0.5 * U(rng), 0.04 + 0.14 * U(rng),
                      0.03 + 0.1 * U(rng), std::cos(t), std::sin(t),
                      (U(rng) < 0.3 ? -1.0 : 1.0) * (0.1 + 0.35 * U(rng))});
  }
  std::vector<double> v(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = (x + 0.5) / size, py = (y + 0.5) / size;
      double acc = 0;
      for (const auto& e : shapes) {
        const double dx = px - e.cx, dy = py - e.cy;
        const double u = (dx * e.cos_t + dy * e.sin_t) / e.a;
        const double w = (-dx * e.sin_t + dy * e.cos_t) / e.b;
        if (u * u + w * w <= 1.0) acc += e.value;
      }
      v[y * size + x] = std::clamp(acc, 0.0, 1.0);
    }
  return Tensor(Shape{size, size, 1}, std::move(v));
}

ImagePair make_pair(const Tensor& hq, std::string id, const DegradationSpec& spec,
                    std::uint64_t base_seed) {
  ImagePair p;
  p.hq = hq;
  p.lq = degrade(hq, spec, derive_seed(base_seed, id));
  p.id = std::move(id);
  return p;
}

std::vector<ImagePair> load_split(const std::vector<ManifestEntry>& entries, Split split,
                                  const DegradationSpec& spec, std::uint64_t base_seed) {
  std::vector<ImagePair> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(make_pair(load_pgm(e.hq_path), e.id, spec, base_seed));
  return out;
}

std::vector<ManifestEntry> write_synthetic_dataset(const std::filesystem::path& dir,
                                                   std::size_t count, std::size_t val_count,
                                                   std::size_t size, std::uint64_t seed) {
  if (val_count > count) throw ConfigError("val_count exceeds count");
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = "phantom" + std::to_string(i);
    const std::string file = id + ".pgm";
    save_pgm(synth_phantom(size, derive_seed(seed, id)), dir / file);
    entries.push_back({id, file, i + val_count >= count ? Split::val : Split::train});
  }
  write_manifest(dir / "manifest.tsv", entries);
  for (auto& e : entries) e.hq_path = dir / e.hq_path;
  return entries;
}

}  // namespace rrwkv
