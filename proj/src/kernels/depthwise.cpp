#include "rrwkv/kernels/depthwise.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>

namespace rrwkv::kernels {

namespace {
std::atomic<std::uint64_t> g_calls{0};
}

std::uint64_t depthwise_conv_calls() { return g_calls.load(); }

void depthwise_conv2d(std::span<const double> x, Grid g, std::span<const double> kernel,
                      std::size_t k, std::span<double> out) {
  g_calls.fetch_add(1, std::memory_order_relaxed);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  const auto C = static_cast<std::ptrdiff_t>(g.channels);
  const auto K = static_cast<std::ptrdiff_t>(k);
  const std::ptrdiff_t r = K / 2;

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t h = 0; h < H; ++h) {
    for (std::ptrdiff_t w = 0; w < W; ++w) {
      double* o = out.data() + (h * W + w) * C;
      for (std::ptrdiff_t c = 0; c < C; ++c) o[c] = 0.0;
      for (std::ptrdiff_t dy = 0; dy < K; ++dy) {
        const std::ptrdiff_t ih = h + dy - r;
        if (ih < 0 || ih >= H) continue;
        for (std::ptrdiff_t dx = 0; dx < K; ++dx) {
          const std::ptrdiff_t iw = w + dx - r;
          if (iw < 0 || iw >= W) continue;
          const double* xi = x.data() + (ih * W + iw) * C;
          const double* kk = kernel.data() + (dy * K + dx) * C;
          for (std::ptrdiff_t c = 0; c < C; ++c) o[c] += xi[c] * kk[c];
        }
      }
    }
  }
}

void depthwise_conv2d_backward(std::span<const double> x, Grid g,
                               std::span<const double> kernel, std::size_t k,
                               std::span<const double> grad_out, std::span<double> grad_x,
                               std::span<double> grad_kernel) {
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  const auto C = static_cast<std::ptrdiff_t>(g.channels);
  const auto K = static_cast<std::ptrdiff_t>(k);
  const std::ptrdiff_t r = K / 2;

  if (!grad_x.empty()) {
    // grad_x[ih, iw] = sum over taps of grad_out[ih - dy + r, iw - dx + r] * kernel[dy, dx]
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ih = 0; ih < H; ++ih) {
      for (std::ptrdiff_t iw = 0; iw < W; ++iw) {
        double* gx = grad_x.data() + (ih * W + iw) * C;
        for (std::ptrdiff_t dy = 0; dy < K; ++dy) {
          const std::ptrdiff_t h = ih - dy + r;
          if (h < 0 || h >= H) continue;
          for (std::ptrdiff_t dx = 0; dx < K; ++dx) {
            const std::ptrdiff_t w = iw - dx + r;
            if (w < 0 || w >= W) continue;
            const double* go = grad_out.data() + (h * W + w) * C;
            const double* kk = kernel.data() + (dy * K + dx) * C;
            for (std::ptrdiff_t c = 0; c < C; ++c) gx[c] += go[c] * kk[c];
          }
        }
      }
    }
  }

  if (!grad_kernel.empty()) {
    // One tap per iteration; each tap's row of C accumulators belongs to one thread.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t tap = 0; tap < K * K; ++tap) {
      const std::ptrdiff_t dy = tap / K, dx = tap % K;
      double* gk = grad_kernel.data() + tap * C;
      const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, r - dy);
      const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(H, H + r - dy);
      const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, r - dx);
      const std::ptrdiff_t w1 = std::min<std::ptrdiff_t>(W, W + r - dx);
      for (std::ptrdiff_t h = h0; h < h1; ++h) {
        const std::ptrdiff_t ih = h + dy - r;
        for (std::ptrdiff_t w = w0; w < w1; ++w) {
          const double* go = grad_out.data() + (h * W + w) * C;
          const double* xi = x.data() + (ih * W + w + dx - r) * C;
          for (std::ptrdiff_t c = 0; c < C; ++c) gk[c] += go[c] * xi[c];
        }
      }
    }
  }
}

}  // namespace rrwkv::kernels
