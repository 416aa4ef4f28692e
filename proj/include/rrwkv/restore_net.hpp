#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rrwkv/blocks.hpp"
#include "rrwkv/ops.hpp"
#include "rrwkv/tensor.hpp"

namespace rrwkv {

enum class Variant { light, full };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::light;
  std::size_t base_channels = 16;
  std::array<std::size_t, 4> blocks{1, 1, 4, 1};
  std::size_t refinement = 1;
  std::size_t recurrences = 2;
  std::size_t hidden_ratio = 4;
  // Kernel of the convs that change channels around pixel (un)shuffle.
  // 3: conv before the (un)shuffle on both paths. 1: 1x1 conv before the
  // unshuffle, 1x1 conv after the shuffle.
  std::size_t resample_kernel = 3;
  AttentionKind attention = AttentionKind::re_wkv;
  ShiftKind shift = ShiftKind::omni;
  // Inputs whose sides are not multiples of 8 are reflect-padded and cropped
  // back; when false they are rejected.
  bool pad_to_multiple = true;

  static ModelConfig light();
  static ModelConfig full();

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

struct Conv {
  Tensor weight;  // k x k x C_in x C_out
  Tensor bias;    // C_out, or undefined

  static Conv init(std::size_t k, std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  Tensor apply(const Tensor& x) const { return conv2d(x, weight, bias); }
  std::size_t numel() const { return weight.numel() + (bias.defined() ? bias.numel() : 0); }
};

struct ModuleCount {
  std::string module;
  std::size_t params = 0;
};

/// 4-level U-shaped restoration network on single-channel H x W x 1 images.
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // image: H x W x 1. Returns image + predicted residual, same shape.
  Tensor forward(const Tensor& image) const;

  NamedTensors parameters() const;
  std::size_t count_params() const;
  std::vector<ModuleCount> param_breakdown() const;

  // Multiply-accumulate count of one forward pass at H x W. Dense and
  // depthwise convs: k*k*C_in*C_out (or k*k*C) per pixel; projections:
  // C_in*C_out per token; each Bi-WKV pass: 7*T*C.
  std::uint64_t estimate_flops(std::size_t height, std::size_t width) const;

  // Collapses every Omni-Shift to its single-kernel form.
  void fuse();
  bool fused() const { return fused_; }

  // Zeroes the output projection so forward(x) == x.
  void zero_output();

 private:
  struct Level {
    std::size_t channels = 0;
    std::vector<BlockParams> blocks;
  };

  Tensor run_level(const Tensor& x, const Level& level) const;
  Tensor downsample(const Tensor& x, const Conv& conv) const;
  Tensor upsample(const Tensor& x, const Conv& conv) const;
  Tensor forward_padded(const Tensor& x) const;

  ModelConfig config_;
  Conv input_;
  std::array<Level, 3> encoder_;
  std::array<Conv, 3> down_;
  Level bottleneck_;
  std::array<Conv, 3> up_;
  std::array<Conv, 2> reduce_;  // decoder levels 3 and 2
  std::array<Level, 3> decoder_;
  Level refinement_;
  Conv output_;
  bool fused_ = false;
};

}  // namespace rrwkv
