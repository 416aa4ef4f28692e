#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rrwkv/rng.hpp"
#include "rrwkv/tensor.hpp"

namespace rrwkv {

/// Per-channel decay magnitude w and current-token bonus u of one WKV instance.
/// w is unconstrained; the effective per-step decay exponent is -w / T.
struct WkvParams {
  Tensor w;
  Tensor u;

  std::size_t channels() const { return w.numel(); }

  static WkvParams init(std::size_t channels, Rng& rng);
};

enum class ScanDirection { horizontal, vertical };

/// Token order of an H x W grid. H-Scan is the canonical row-major order
/// (h, w) -> h*W + w; V-Scan is column-major (h, w) -> w*H + h.
struct ScanOrder {
  ScanDirection direction = ScanDirection::horizontal;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const { return height * width; }
  std::size_t index(std::size_t h, std::size_t w) const;

  // perm[s] = canonical token placed at scan position s.
  std::vector<std::size_t> permutation() const;
  // inv[t] = scan position of canonical token t.
  std::vector<std::size_t> inverse() const;
};

// Schedule of recurrence j (1-based): odd -> H-Scan, even -> V-Scan.
ScanDirection scan_direction_for(std::size_t recurrence);

/// Reorders the rows of a canonical (H-Scan) T x C tensor into `order`;
/// from_scan_order undoes it. Both are differentiable.
Tensor to_scan_order(const Tensor& x, const ScanOrder& order);
Tensor from_scan_order(const Tensor& x, const ScanOrder& order);

/// Bidirectional WKV on a T x C sequence via the linear scan.
Tensor bi_wkv(const Tensor& k, const Tensor& v, const WkvParams& p);

/// Causal WKV: token t attends to i <= t.
Tensor uni_wkv(const Tensor& k, const Tensor& v, const WkvParams& p);

/// Quadratic reference of bi_wkv (values only, no graph).
Tensor bi_wkv_oracle(const Tensor& k, const Tensor& v, const WkvParams& p);
Tensor uni_wkv_oracle(const Tensor& k, const Tensor& v, const WkvParams& p);

/// Recurrent multi-direction attention. wkv^(0) = v; recurrence j permutes k and
/// wkv^(j-1) into its scan order, applies Bi-WKV with params[j-1], and returns
/// the result to canonical order. Returns wkv^(M), M = params.size().
Tensor re_wkv(const Tensor& k, const Tensor& v, std::span<const WkvParams> params,
              std::size_t height, std::size_t width);

}  // namespace rrwkv
