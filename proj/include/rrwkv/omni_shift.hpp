#pragma once

#include <cstddef>

#include "rrwkv/rng.hpp"
#include "rrwkv/tensor.hpp"

namespace rrwkv {

enum class ShiftMode { train, fused };

/// Omni-Shift: alpha[0]*DConv5 + alpha[1]*DConv3 + alpha[2]*DConv1 + alpha[3]*x
/// while training, one 5x5 depthwise convolution after fuse().
struct OmniShiftParams {
  Tensor k5;     // 5 x 5 x C
  Tensor k3;     // 3 x 3 x C
  Tensor k1;     // 1 x 1 x C
  Tensor alpha;  // 4
  Tensor fused;  // 5 x 5 x C, present only in fused mode
  ShiftMode mode = ShiftMode::train;

  std::size_t channels() const { return k1.numel(); }

  // alpha = 1, k1 = 1, k5 and k3 small noise: starts close to 2x.
  static OmniShiftParams init(std::size_t channels, Rng& rng);
};

// The single 5x5 kernel equivalent to the four branches.
Tensor fused_kernel(const OmniShiftParams& p);

// Returns fused-mode params; branch kernels are kept. Throws StateError if
// already fused.
OmniShiftParams fuse(const OmniShiftParams& p);

// x: H x W x C.
Tensor omni_shift(const Tensor& x, const OmniShiftParams& p);

/// Interpolating shifts used by the ablation variants. out = (1 - m) x + m s(x),
/// s(x) the neighbour shifted in with zero padding.
// Uni-Shift: neighbour on the left (w - 1); mix holds one coefficient.
Tensor uni_shift(const Tensor& x, const Tensor& mix);

// Quad-Shift: channel group g in {0,1,2,3} takes its neighbour from the left,
// right, top, bottom respectively; mix holds one coefficient per group.
// C must be divisible by 4.
Tensor quad_shift(const Tensor& x, const Tensor& mix);

}  // namespace rrwkv
