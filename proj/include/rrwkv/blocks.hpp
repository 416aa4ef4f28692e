#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rrwkv/omni_shift.hpp"
#include "rrwkv/rng.hpp"
#include "rrwkv/tensor.hpp"
#include "rrwkv/wkv.hpp"

namespace rrwkv {

// Parameter handles with stable hierarchical names ("enc1.0.spatial.w_r").
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

enum class AttentionKind { re_wkv, bi_wkv, uni_wkv };
enum class ShiftKind { omni, quad, uni };

std::string to_string(AttentionKind kind);
std::string to_string(ShiftKind kind);
// Throw ConfigError on unknown names.
AttentionKind parse_attention(const std::string& name);
ShiftKind parse_shift(const std::string& name);

struct BlockConfig {
  std::size_t channels = 16;
  std::size_t hidden_ratio = 4;  // channel-mix MLP width / channels
  std::size_t recurrences = 2;   // M, used by re_wkv only
  AttentionKind attention = AttentionKind::re_wkv;
  ShiftKind shift = ShiftKind::omni;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  static LayerNormParams init(std::size_t channels);
};

/// The token-shift layer of one mix, any of the three kinds.
struct TokenShift {
  ShiftKind kind = ShiftKind::omni;
  OmniShiftParams omni;  // kind == omni
  Tensor mix;            // kind == quad (4) or uni (1)

  static TokenShift init(ShiftKind kind, std::size_t channels, Rng& rng);
  // x: H x W x C.
  Tensor apply(const Tensor& x) const;
  // Switches Omni-Shift to its single-kernel form; no-op for the other kinds.
  void fuse();
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct SpatialMixParams {
  LayerNormParams ln;
  TokenShift shift;
  Tensor w_r, w_k, w_v, w_o;  // C x C
  AttentionKind attention = AttentionKind::re_wkv;
  std::vector<WkvParams> attn;  // M entries for re_wkv, one otherwise

  static SpatialMixParams init(const BlockConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct ChannelMixParams {
  LayerNormParams ln;
  TokenShift shift;
  Tensor w_r;  // C x C
  Tensor w_k;  // C x C_h
  Tensor w_v;  // C_h x C
  Tensor w_o;  // C x C

  static ChannelMixParams init(const BlockConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct BlockParams {
  SpatialMixParams spatial;
  ChannelMixParams channel;

  // Output projections start at zero, so a fresh block is the identity.
  static BlockParams init(const BlockConfig& cfg, Rng& rng);
  void fuse();
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// The attention stage alone: wkv from K and V on an H x W grid.
Tensor attention(const Tensor& k, const Tensor& v, const SpatialMixParams& p, std::size_t height,
                 std::size_t width);

// x: T x C tokens of an H x W grid (T = H * W).
Tensor spatial_mix(const Tensor& x, std::size_t height, std::size_t width,
                   const SpatialMixParams& p);
Tensor channel_mix(const Tensor& x, std::size_t height, std::size_t width,
                   const ChannelMixParams& p);

// x1 = x + spatial_mix(x); out = x1 + channel_mix(x1).
Tensor r_rwkv_block(const Tensor& x, std::size_t height, std::size_t width,
                    const BlockParams& p);

}  // namespace rrwkv
