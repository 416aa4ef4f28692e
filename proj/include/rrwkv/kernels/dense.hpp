#pragma once

#include <cstddef>
#include <span>

#include "rrwkv/kernels/depthwise.hpp"

namespace rrwkv::kernels {

// C (+)= op(A) * op(B) for row-major operands, op(X) = X or X^T.
// m x n = (m x k) * (k x n) after the transposes are applied.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

// Dense "same" convolution (cross-correlation), zero padding, odd k.
// weight layout: k x k x C_in x C_out; bias: C_out or empty.
void conv2d(std::span<const double> x, Grid in, std::span<const double> weight, std::size_t k,
            std::span<const double> bias, std::size_t out_channels, std::span<double> out);

// Accumulating backward; empty spans skip the corresponding gradient.
void conv2d_backward(std::span<const double> x, Grid in, std::span<const double> weight,
                     std::size_t k, std::size_t out_channels, std::span<const double> grad_out,
                     std::span<double> grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias);

void conv2d_ref(std::span<const double> x, Grid in, std::span<const double> weight, std::size_t k,
                std::span<const double> bias, std::size_t out_channels, std::span<double> out);

}  // namespace rrwkv::kernels
