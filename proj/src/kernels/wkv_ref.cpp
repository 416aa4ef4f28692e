#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "rrwkv/errors.hpp"
#include "rrwkv/kernels/wkv.hpp"

// Quadratic reference implementations. Kept deliberately literal: they are the
// ground truth the linear scan is tested against.

namespace rrwkv::kernels {

namespace {

using Real = long double;

void check(std::span<const double> k, std::span<const double> v, std::span<const double> w,
           std::span<const double> u, WkvShape s) {
  if (s.tokens == 0) throw ShapeError("wkv_oracle: empty sequence (T = 0)");
  const std::size_t n = s.tokens * s.channels;
  if (k.size() != n || v.size() != n || w.size() != s.channels || u.size() != s.channels) {
    throw ShapeError("wkv_oracle: operand sizes do not match T x C");
  }
}

bool attends(std::size_t t, std::size_t i, WkvMode mode) {
  return mode == WkvMode::bidirectional || i <= t;
}

// Exponent of the weight token t gives to token i.
Real exponent(std::size_t t, std::size_t i, Real decay, Real bonus, Real key) {
  if (i == t) return bonus + key;
  const Real dist = static_cast<Real>(t > i ? t - i : i - t);
  return -(dist - 1) * decay + key;
}

}  // namespace

void wkv_oracle(std::span<const double> k, std::span<const double> v,
                std::span<const double> w, std::span<const double> u, WkvShape shape,
                WkvMode mode, std::span<double> y) {
  check(k, v, w, u, shape);
  const std::size_t T = shape.tokens, C = shape.channels;
  std::vector<Real> ex(T);
  for (std::size_t c = 0; c < C; ++c) {
    const Real decay = static_cast<Real>(w[c]) / static_cast<Real>(T);
    const Real bonus = u[c];
    for (std::size_t t = 0; t < T; ++t) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        ex[i] = exponent(t, i, decay, bonus, k[i * C + c]);
        if (ex[i] > mx) mx = ex[i];
      }
      Real num = 0, den = 0;
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        const Real e = std::exp(ex[i] - mx);
        num += e * static_cast<Real>(v[i * C + c]);
        den += e;
      }
      y[t * C + c] = static_cast<double>(num / den);
    }
  }
}

void wkv_backward_oracle(std::span<const double> k, std::span<const double> v,
                         std::span<const double> w, std::span<const double> u,
                         std::span<const double> grad_y, WkvShape shape, WkvMode mode,
                         std::span<double> gk, std::span<double> gv, std::span<double> gw,
                         std::span<double> gu) {
  check(k, v, w, u, shape);
  const std::size_t T = shape.tokens, C = shape.channels;
  std::vector<Real> ex(T), p(T);
  for (std::size_t c = 0; c < C; ++c) {
    const Real decay = static_cast<Real>(w[c]) / static_cast<Real>(T);
    const Real bonus = u[c];
    Real gw_acc = 0, gu_acc = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const Real g = grad_y[t * C + c];
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        ex[i] = exponent(t, i, decay, bonus, k[i * C + c]);
        if (ex[i] > mx) mx = ex[i];
      }
      Real den = 0, yt = 0;
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        p[i] = std::exp(ex[i] - mx);
        den += p[i];
      }
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        p[i] /= den;
        yt += p[i] * static_cast<Real>(v[i * C + c]);
      }
      // y_t = sum_i p_i v_i with p = softmax(ex): dy/dv_i = p_i, dy/dex_i = p_i (v_i - y_t).
      for (std::size_t i = 0; i < T; ++i) {
        if (!attends(t, i, mode)) continue;
        const Real vi = v[i * C + c];
        const Real dex = g * p[i] * (vi - yt);
        gv[i * C + c] += static_cast<double>(g * p[i]);
        gk[i * C + c] += static_cast<double>(dex);
        if (i == t) {
          gu_acc += dex;
        } else {
          const Real dist = static_cast<Real>(t > i ? t - i : i - t);
          gw_acc += dex * (-(dist - 1) / static_cast<Real>(T));
        }
      }
    }
    gw[c] += static_cast<double>(gw_acc);
    gu[c] += static_cast<double>(gu_acc);
  }
}

}  // namespace rrwkv::kernels
