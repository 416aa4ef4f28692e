#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace rrwkv::kernels {

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t tokens() const { return height * width; }
  std::size_t size() const { return height * width * channels; }
};

// Depthwise "same" cross-correlation over an H x W x C image with a k x k x C
// kernel (k odd, zero padding). Layouts are row-major, channel-last.
//
// The OpenMP kernels parallelize over output rows (forward, input grad) and
// over channels (kernel grad); every output element is written by exactly one
// thread, so results do not depend on the thread count.
void depthwise_conv2d(std::span<const double> x, Grid grid, std::span<const double> kernel,
                      std::size_t k, std::span<double> out);

// Accumulates into grad_x and/or grad_kernel; pass an empty span to skip one.
void depthwise_conv2d_backward(std::span<const double> x, Grid grid,
                               std::span<const double> kernel, std::size_t k,
                               std::span<const double> grad_out, std::span<double> grad_x,
                               std::span<double> grad_kernel);

// Serial nested-loop references.
void depthwise_conv2d_ref(std::span<const double> x, Grid grid, std::span<const double> kernel,
                          std::size_t k, std::span<double> out);
void depthwise_conv2d_backward_ref(std::span<const double> x, Grid grid,
                                   std::span<const double> kernel, std::size_t k,
                                   std::span<const double> grad_out, std::span<double> grad_x,
                                   std::span<double> grad_kernel);

// Number of depthwise_conv2d forward invocations since process start.
std::uint64_t depthwise_conv_calls();

}  // namespace rrwkv::kernels
