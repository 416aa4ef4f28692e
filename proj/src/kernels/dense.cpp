#include "rrwkv/kernels/dense.hpp"

#include <Eigen/Core>
#include <vector>

namespace rrwkv::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Gathers k x k neighbourhoods into a T x (k*k*C_in) matrix, zero outside the image.
void im2col(std::span<const double> x, Grid g, std::size_t k, std::vector<double>& cols) {
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  const auto C = static_cast<std::ptrdiff_t>(g.channels);
  const auto K = static_cast<std::ptrdiff_t>(k);
  const std::ptrdiff_t r = K / 2;
  const std::ptrdiff_t row = K * K * C;
  cols.assign(static_cast<std::size_t>(H * W * row), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t h = 0; h < H; ++h) {
    for (std::ptrdiff_t w = 0; w < W; ++w) {
      double* dst = cols.data() + (h * W + w) * row;
      for (std::ptrdiff_t dy = 0; dy < K; ++dy) {
        const std::ptrdiff_t ih = h + dy - r;
        if (ih < 0 || ih >= H) continue;
        for (std::ptrdiff_t dx = 0; dx < K; ++dx) {
          const std::ptrdiff_t iw = w + dx - r;
          if (iw < 0 || iw >= W) continue;
          const double* src = x.data() + (ih * W + iw) * C;
          double* d = dst + (dy * K + dx) * C;
          for (std::ptrdiff_t c = 0; c < C; ++c) d[c] = src[c];
        }
      }
    }
  }
}

// Scatter-add counterpart of im2col, organised by destination pixel so each
// output element has a single writer.
void col2im_add(const std::vector<double>& cols, Grid g, std::size_t k, std::span<double> gx) {
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  const auto C = static_cast<std::ptrdiff_t>(g.channels);
  const auto K = static_cast<std::ptrdiff_t>(k);
  const std::ptrdiff_t r = K / 2;
  const std::ptrdiff_t row = K * K * C;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ih = 0; ih < H; ++ih) {
    for (std::ptrdiff_t iw = 0; iw < W; ++iw) {
      double* d = gx.data() + (ih * W + iw) * C;
      for (std::ptrdiff_t dy = 0; dy < K; ++dy) {
        const std::ptrdiff_t h = ih - dy + r;
        if (h < 0 || h >= H) continue;
        for (std::ptrdiff_t dx = 0; dx < K; ++dx) {
          const std::ptrdiff_t w = iw - dx + r;
          if (w < 0 || w >= W) continue;
          const double* src = cols.data() + (h * W + w) * row + (dy * K + dx) * C;
          for (std::ptrdiff_t c = 0; c < C; ++c) d[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Map out(c.data(), M, N);
  if (!accumulate) out.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap(a.data(), M, K) * ConstMap(b.data(), K, N);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap(a.data(), K, M).transpose() * ConstMap(b.data(), K, N);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap(a.data(), M, K) * ConstMap(b.data(), N, K).transpose();
  } else {
    out.noalias() +=
        ConstMap(a.data(), K, M).transpose() * ConstMap(b.data(), N, K).transpose();
  }
}

void conv2d(std::span<const double> x, Grid in, std::span<const double> weight, std::size_t k,
            std::span<const double> bias, std::size_t out_channels, std::span<double> out) {
  const std::size_t T = in.tokens();
  const std::size_t inner = k * k * in.channels;
  if (k == 1) {
    gemm(false, false, T, out_channels, inner, x, weight, out, false);
  } else {
    std::vector<double> cols;
    im2col(x, in, k, cols);
    gemm(false, false, T, out_channels, inner, cols, weight, out, false);
  }
  if (!bias.empty()) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < out_channels; ++o) out[t * out_channels + o] += bias[o];
  }
}

void conv2d_backward(std::span<const double> x, Grid in, std::span<const double> weight,
                     std::size_t k, std::size_t out_channels, std::span<const double> grad_out,
                     std::span<double> grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const std::size_t T = in.tokens();
  const std::size_t inner = k * k * in.channels;
  if (!grad_bias.empty()) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < out_channels; ++o) grad_bias[o] += grad_out[t * out_channels + o];
  }
  if (k == 1) {
    if (!grad_weight.empty()) gemm(true, false, inner, out_channels, T, x, grad_out, grad_weight, true);
    if (!grad_x.empty()) gemm(false, true, T, inner, out_channels, grad_out, weight, grad_x, true);
    return;
  }
  std::vector<double> cols;
  if (!grad_weight.empty()) {
    im2col(x, in, k, cols);
    gemm(true, false, inner, out_channels, T, cols, grad_out, grad_weight, true);
  }
  if (!grad_x.empty()) {
    cols.assign(T * inner, 0.0);
    gemm(false, true, T, inner, out_channels, grad_out, weight, cols, false);
    col2im_add(cols, in, k, grad_x);
  }
}

void conv2d_ref(std::span<const double> x, Grid in, std::span<const double> weight, std::size_t k,
                std::span<const double> bias, std::size_t out_channels, std::span<double> out) {
  const long H = static_cast<long>(in.height), W = static_cast<long>(in.width);
  const long Ci = static_cast<long>(in.channels), Co = static_cast<long>(out_channels);
  const long K = static_cast<long>(k), r = K / 2;
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long o = 0; o < Co; ++o) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (long dy = 0; dy < K; ++dy)
          for (long dx = 0; dx < K; ++dx) {
            const long ih = h + dy - r, iw = w + dx - r;
            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
            for (long c = 0; c < Ci; ++c)
              s += x[(ih * W + iw) * Ci + c] * weight[((dy * K + dx) * Ci + c) * Co + o];
          }
        out[(h * W + w) * Co + o] = s;
      }
}

}  // namespace rrwkv::kernels
