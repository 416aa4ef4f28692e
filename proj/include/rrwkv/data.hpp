#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rrwkv/degrade.hpp"
#include "rrwkv/tensor.hpp"

namespace rrwkv {

struct ImagePair {
  Tensor lq;  // H x W x 1 in [0, 1]
  Tensor hq;  // H x W x 1 in [0, 1]
  std::string id;
};

// Binary PGM (P5), maxval up to 65535; 16-bit samples are big-endian as the
// format requires. Values map to [0, 1] on load; save clamps, scales and rounds.
Tensor load_pgm(const std::filesystem::path& path);
Tensor decode_pgm(const std::string& bytes, const std::string& what = "pgm");
void save_pgm(const Tensor& image, const std::filesystem::path& path, int bits = 16);
std::string encode_pgm(const Tensor& image, int bits = 16);

// `count` aligned crops of size x size, offsets uniform over the valid range.
std::vector<ImagePair> sample_patches(const ImagePair& pair, std::size_t size, std::size_t count,
                                      std::uint64_t seed);

enum class Split { train, val, test };
std::string to_string(Split s);

struct ManifestEntry {
  std::string id;
  std::filesystem::path hq_path;
  Split split = Split::train;
};

// Tab-separated `id  hq_path  split`; blank lines and '#' comments skipped.
// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Random-ellipse phantom in [0, 1], deterministic in seed.
Tensor synth_phantom(std::size_t size, std::uint64_t seed);

// HQ images of one split with LQ counterparts degraded on the fly; the noise
// seed of each item is derive_seed(base_seed, id).
std::vector<ImagePair> load_split(const std::vector<ManifestEntry>& entries, Split split,
                                  const DegradationSpec& spec, std::uint64_t base_seed);

// Same pairing for in-memory images.
ImagePair make_pair(const Tensor& hq, std::string id, const DegradationSpec& spec,
                    std::uint64_t base_seed);

// Writes `count` phantoms plus a manifest to `dir`; the last `val_count`
// entries are the val split.
std::vector<ManifestEntry> write_synthetic_dataset(const std::filesystem::path& dir,
                                                   std::size_t count, std::size_t val_count,
                                                   std::size_t size, std::uint64_t seed);

}  // namespace rrwkv
