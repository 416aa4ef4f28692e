#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rrwkv/blocks.hpp"
#include "rrwkv/restore_net.hpp"

namespace rrwkv {

/// Versioned binary container:
///   "RRWKVCKP" | u32 version | u64 manifest bytes | JSON manifest | f64 LE data
/// The manifest lists {name, shape, offset} per tensor, offsets counted in
/// doubles from the start of the data section.
struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  bool fused = false;
  NamedTensors tensors;  // model parameters, then any optimizer state

  // Tensor by name; throws FormatError if absent.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

CheckpointData snapshot(const Model& model, std::uint64_t iteration, std::uint64_t seed);

// Rebuilds the model described by the checkpoint and copies its weights in.
Model restore_model(const CheckpointData& data);

// Copies matching weights into an existing model; FormatError on any missing
// or mis-shaped parameter.
void load_weights(const CheckpointData& data, Model& model);

}  // namespace rrwkv
