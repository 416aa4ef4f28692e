#pragma once

#include <cstddef>
#include <span>

namespace rrwkv::kernels {

enum class WkvMode {
  bidirectional,  // every token attends to all tokens
  causal,         // token t attends to tokens i <= t only
};

struct WkvShape {
  std::size_t tokens = 0;
  std::size_t channels = 0;
};

// WKV attention over a T x C sequence (row-major, channel-last):
//
//   y[t] = (sum_{i != t} e^{-(|t-i|-1) w / T + k[i]} v[i] + e^{u + k[t]} v[t])
//          / (same weights without v)
//
// with the sum restricted to i < t in causal mode. w and u are per channel.
//
// wkv_forward evaluates this with one forward and one backward linear pass per
// channel. Each pass carries its accumulators as mantissas over a shared running
// exponent, so no intermediate exponentiates anything larger than zero.
// log_den receives log of the denominator for each (t, c); wkv_backward needs it.
//
// Channels are independent and processed in an OpenMP loop.
void wkv_forward(std::span<const double> k, std::span<const double> v,
                 std::span<const double> w, std::span<const double> u, WkvShape shape,
                 WkvMode mode, std::span<double> y, std::span<double> log_den);

// Linear-time reverse pass. Accumulates into gk, gv (T x C) and gw, gu (C).
void wkv_backward(std::span<const double> k, std::span<const double> v,
                  std::span<const double> w, std::span<const double> u,
                  std::span<const double> y, std::span<const double> log_den,
                  std::span<const double> grad_y, WkvShape shape, WkvMode mode,
                  std::span<double> gk, std::span<double> gv, std::span<double> gw,
                  std::span<double> gu);

// Serial reference: the literal double loop in long double, subtracting the
// per-position maximum exponent before exponentiating. O(T^2 C).
void wkv_oracle(std::span<const double> k, std::span<const double> v,
                std::span<const double> w, std::span<const double> u, WkvShape shape,
                WkvMode mode, std::span<double> y);

// Serial reference gradient obtained by differentiating the literal formula
// through the normalized weights. O(T^2 C). Accumulates like wkv_backward.
void wkv_backward_oracle(std::span<const double> k, std::span<const double> v,
                         std::span<const double> w, std::span<const double> u,
                         std::span<const double> grad_y, WkvShape shape, WkvMode mode,
                         std::span<double> gk, std::span<double> gv, std::span<double> gw,
                         std::span<double> gu);

}  // namespace rrwkv::kernels
