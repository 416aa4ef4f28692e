#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rrwkv/blocks.hpp"
#include "rrwkv/ops.hpp"
#include "rrwkv/restore_net.hpp"
#include "rrwkv/tensor.hpp"

namespace rrwkv {

// Differentiable image -> image map (H x W x 1 to H x W x C_out).
using ImageFn = std::function<Tensor(const Tensor&)>;

struct ErfMap {
  std::string label;
  std::size_t samples = 0;
  Tensor map;  // H x W x 1, max-normalized to 1 (all zero if the gradient is)

  // Fraction of pixels whose normalized value exceeds `threshold`.
  double coverage(double threshold = 1e-4) const;
};

/// Averages |d f(x)[center, channel 0] / d x| over `inputs` and normalizes.
ErfMap erf(const ImageFn& f, const std::vector<Tensor>& inputs, std::size_t center_h,
           std::size_t center_w, std::string label = "");

// `count` uniform [0, 1] images, fixed by seed.
std::vector<Tensor> erf_inputs(std::size_t height, std::size_t width, std::size_t count,
                               std::uint64_t seed);

/// Minimal model for isolating an attention/shift pairing: 1x1 conv lifting to
/// C channels, `blocks` R-RWKV blocks, 1x1 conv back to one channel, global
/// residual. Per-pixel lifting keeps Uni-WKV + Uni-Shift exactly causal.
struct ProbeConfig {
  AttentionKind attention = AttentionKind::re_wkv;
  ShiftKind shift = ShiftKind::omni;
  // Far-field gradients of a random probe sit within a decade of the 1e-4
  // coverage threshold; width and depth here were chosen from a seed sweep so
  // the coverage statistic reflects reachability rather than the draw.
  std::size_t channels = 32;
  std::size_t blocks = 2;
  std::size_t recurrences = 2;
  std::uint64_t seed = 0;
  // Random output projections; with zero-initialized ones every block is the
  // identity and the map degenerates to a delta.
  bool live_outputs = true;

  std::string label() const;  // "re-wkv+omni"
  // Parses "re-wkv+omni" style labels; ConfigError otherwise.
  static ProbeConfig parse(const std::string& label);
};

class ProbeModel {
 public:
  static ProbeModel build(const ProbeConfig& config);
  Tensor forward(const Tensor& image) const;
  const ProbeConfig& config() const { return config_; }

 private:
  ProbeConfig config_;
  Conv lift_, project_;
  std::vector<BlockParams> blocks_;
};

// The nine attention x shift pairings in a fixed order.
std::vector<ProbeConfig> all_probe_configs(std::uint64_t seed);

// ERF maps of several probe models on a shared input set, centered.
std::vector<ErfMap> erf_compare(const std::vector<ProbeConfig>& configs, std::size_t height,
                                std::size_t width, std::size_t samples, std::uint64_t seed);

// label,samples,coverage rows.
std::string erf_csv(const std::vector<ErfMap>& maps, double threshold = 1e-4);

}  // namespace rrwkv
