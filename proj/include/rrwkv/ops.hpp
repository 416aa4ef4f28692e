#pragma once

#include <cstddef>

#include "rrwkv/tensor.hpp"

// Differentiable tensor operations. Every function records a backward closure
// on the thread's tape when grad mode is on and an input requires grad.
//
// Image tensors are H x W x C; token tensors are T x C with T = H * W in
// row-major (H-Scan) order, so the two views share one memory layout.

namespace rrwkv {

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

// x + bias, bias broadcast along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// alpha[index] * x, with alpha a learnable vector.
Tensor scale_by(const Tensor& x, const Tensor& alpha, std::size_t index);

Tensor sigmoid(const Tensor& x);
Tensor squared_relu(const Tensor& x);

// Normalizes each row over the last axis, then applies the affine (gamma, beta).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: H x W x C, kernel: k x k x C (k odd), zero "same" padding.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

// x: H x W x C_in, weight: k x k x C_in x C_out, bias: C_out (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Space-to-depth: H x W x C -> H/r x W/r x C*r*r, channel index c*r*r + dy*r + dx.
Tensor pixel_unshuffle(const Tensor& x, std::size_t r = 2);
Tensor pixel_shuffle(const Tensor& x, std::size_t r = 2);

Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);

// Reflect-pads an H x W x C image at the bottom and right edge (edge pixel not repeated).
Tensor reflect_pad(const Tensor& x, std::size_t pad_bottom, std::size_t pad_right);

// Keeps the top-left height x width window of an H x W x C image.
Tensor crop(const Tensor& x, std::size_t height, std::size_t width);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Scalar view of one element (flat index).
Tensor select(const Tensor& x, std::size_t index);

}  // namespace rrwkv
