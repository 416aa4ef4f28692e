#include "rrwkv/kernels/depthwise.hpp"

// Serial nested-loop references used as test oracles and benchmark baselines.

namespace rrwkv::kernels {

void depthwise_conv2d_ref(std::span<const double> x, Grid g, std::span<const double> kernel,
                          std::size_t k, std::span<double> out) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const long C = static_cast<long>(g.channels), K = static_cast<long>(k), r = K / 2;
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long c = 0; c < C; ++c) {
        double s = 0.0;
        for (long dy = 0; dy < K; ++dy)
          for (long dx = 0; dx < K; ++dx) {
            const long ih = h + dy - r, iw = w + dx - r;
            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
            s += x[(ih * W + iw) * C + c] * kernel[(dy * K + dx) * C + c];
          }
        out[(h * W + w) * C + c] = s;
      }
}

void depthwise_conv2d_backward_ref(std::span<const double> x, Grid g,
                                   std::span<const double> kernel, std::size_t k,
                                   std::span<const double> grad_out, std::span<double> grad_x,
                                   std::span<double> grad_kernel) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const long C = static_cast<long>(g.channels), K = static_cast<long>(k), r = K / 2;
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long c = 0; c < C; ++c) {
        const double go = grad_out[(h * W + w) * C + c];
        for (long dy = 0; dy < K; ++dy)
          for (long dx = 0; dx < K; ++dx) {
            const long ih = h + dy - r, iw = w + dx - r;
            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
            const long xi = (ih * W + iw) * C + c, ki = (dy * K + dx) * C + c;
            if (!grad_x.empty()) grad_x[xi] += go * kernel[ki];
            if (!grad_kernel.empty()) grad_kernel[ki] += go * x[xi];
          }
      }
}

}  // namespace rrwkv::kernels
