#include "rrwkv/kernels/wkv.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rrwkv/errors.hpp"

namespace rrwkv::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// N accumulators sharing one exponent: value_i = m[i] * exp(e).
// decay() multiplies every accumulator by exp(-d) without touching mantissas;
// add() rescales toward the larger exponent so the stored mantissas stay bounded.
template <std::size_t N>
struct ScaledSum {
  double e = kNegInf;
  std::array<double, N> m{};

  bool empty() const { return e == kNegInf; }

  void decay(double d) { e -= d; }

  void add(double exponent, const std::array<double, N>& values) {
    if (exponent > e) {
      const double s = std::exp(e - exponent);
      for (std::size_t i = 0; i < N; ++i) m[i] = m[i] * s + values[i];
      e = exponent;
    } else {
      const double s = std::exp(exponent - e);
      for (std::size_t i = 0; i < N; ++i) m[i] += values[i] * s;
    }
  }
};

void check_finite(std::span<const double> values, const char* name) {
  for (double x : values) {
    if (!std::isfinite(x)) throw NumericError(std::string("wkv: non-finite value in ") + name);
  }
}

void check_shapes(std::span<const double> k, std::span<const double> v,
                  std::span<const double> w, std::span<const double> u, WkvShape s) {
  if (s.tokens == 0) throw ShapeError("wkv: empty sequence (T = 0)");
  const std::size_t n = s.tokens * s.channels;
  if (k.size() != n || v.size() != n || w.size() != s.channels || u.size() != s.channels) {
    throw ShapeError("wkv: operand sizes do not match T x C = " + std::to_string(s.tokens) + " x " +
                     std::to_string(s.channels));
  }
}

}  // namespace

void wkv_forward(std::span<const double> k, std::span<const double> v,
                 std::span<const double> w, std::span<const double> u, WkvShape shape,
                 WkvMode mode, std::span<double> y, std::span<double> log_den) {
  check_shapes(k, v, w, u, shape);
  check_finite(k, "k");
  check_finite(v, "v");
  check_finite(w, "w");
  check_finite(u, "u");

  const auto T = static_cast<std::ptrdiff_t>(shape.tokens);
  const auto C = static_cast<std::ptrdiff_t>(shape.channels);
  const bool bidirectional = mode == WkvMode::bidirectional;

#pragma omp parallel
  {
    std::vector<double> pe(T), pa(T), pb(T);
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const double d = w[c] / static_cast<double>(T);

      ScaledSum<2> prefix;
      for (std::ptrdiff_t t = 0; t < T; ++t) {
        pe[t] = prefix.e;
        pa[t] = prefix.m[0];
        pb[t] = prefix.m[1];
        const double kt = k[t * C + c];
        prefix.decay(d);
        prefix.add(kt, {v[t * C + c], 1.0});
      }

      ScaledSum<2> suffix;
      for (std::ptrdiff_t t = T - 1; t >= 0; --t) {
        const std::ptrdiff_t idx = t * C + c;
        const double kt = k[idx];
        const double vt = v[idx];
        const double ed = u[c] + kt;
        double m = std::max(pe[t], ed);
        if (bidirectional) m = std::max(m, suffix.e);

        const double sp = std::exp(pe[t] - m);
        const double sd = std::exp(ed - m);
        double num = pa[t] * sp + vt * sd;
        double den = pb[t] * sp + sd;
        if (bidirectional && !suffix.empty()) {
          const double ss = std::exp(suffix.e - m);
          num += suffix.m[0] * ss;
          den += suffix.m[1] * ss;
        }
        y[idx] = num / den;
        log_den[idx] = m + std::log(den);

        if (bidirectional) {
          suffix.decay(d);
          suffix.add(kt, {vt, 1.0});
        }
      }
    }
  }
}

void wkv_backward(std::span<const double> k, std::span<const double> v,
                  std::span<const double> w, std::span<const double> u,
                  std::span<const double> y, std::span<const double> log_den,
                  std::span<const double> grad_y, WkvShape shape, WkvMode mode,
                  std::span<double> gk, std::span<double> gv, std::span<double> gw,
                  std::span<double> gu) {
  check_shapes(k, v, w, u, shape);
  const std::size_t n = shape.tokens * shape.channels;
  if (y.size() != n || log_den.size() != n || grad_y.size() != n) {
    throw StateError("wkv_backward: saved forward state missing or mis-sized");
  }

  const auto T = static_cast<std::ptrdiff_t>(shape.tokens);
  const auto C = static_cast<std::ptrdiff_t>(shape.channels);
  const bool bidirectional = mode == WkvMode::bidirectional;
  const double inv_t = 1.0 / static_cast<double>(T);

  // Notation per channel: g = dL/dy, L = log denominator, gn = g e^{-L}, gd = -g y e^{-L}.
  //   dL/dv_i = e^{k_i} (sum_{t != i} e^{-(|t-i|-1)d} gn_t + e^u gn_i)
  //   dL/dk_i = v_i dL/dv_i + e^{k_i} (same sums over gd)
  //   dL/dw   = -(1/T) sum_t (gn_t (A'_t + C'_t) + gd_t (B'_t + D'_t))
  // where A', B' (C', D') are the prefix (suffix) sums weighted by the extra
  // distance factor (|t-i| - 1); they obey A'_{t+1} = e^{-d} (A'_t + A_t).
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    const double d = w[c] / static_cast<double>(T);
    double gw_acc = 0.0;
    double gu_acc = 0.0;

    ScaledSum<4> fwd_prefix;  // {A, B, A', B'}
    ScaledSum<2> grad_prefix; // sums of gn, gd over t < i
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      const std::ptrdiff_t idx = t * C + c;
      const double g = grad_y[idx];
      const double L = log_den[idx];
      const double yt = y[idx];
      const double kt = k[idx];
      const double vt = v[idx];

      if (!fwd_prefix.empty()) {
        const double s = std::exp(fwd_prefix.e - L);
        gw_acc += g * s * (fwd_prefix.m[2] - yt * fwd_prefix.m[3]);
      }
      if (bidirectional && !grad_prefix.empty()) {
        const double s = std::exp(grad_prefix.e + kt);
        const double sn = grad_prefix.m[0] * s;
        const double sd = grad_prefix.m[1] * s;
        gv[idx] += sn;
        gk[idx] += vt * sn + sd;
      }
      const double q = g * std::exp(u[c] + kt - L);
      gv[idx] += q;
      gk[idx] += q * (vt - yt);
      gu_acc += q * (vt - yt);

      fwd_prefix.m[2] += fwd_prefix.m[0];
      fwd_prefix.m[3] += fwd_prefix.m[1];
      fwd_prefix.decay(d);
      fwd_prefix.add(kt, {vt, 1.0, 0.0, 0.0});
      if (bidirectional) {
        grad_prefix.decay(d);
        grad_prefix.add(-L, {g, -g * yt});
      }
    }

    ScaledSum<4> fwd_suffix;
    ScaledSum<2> grad_suffix;
    for (std::ptrdiff_t t = T - 1; t >= 0; --t) {
      const std::ptrdiff_t idx = t * C + c;
      const double g = grad_y[idx];
      const double L = log_den[idx];
      const double yt = y[idx];
      const double kt = k[idx];
      const double vt = v[idx];

      if (bidirectional && !fwd_suffix.empty()) {
        const double s = std::exp(fwd_suffix.e - L);
        gw_acc += g * s * (fwd_suffix.m[2] - yt * fwd_suffix.m[3]);
      }
      if (!grad_suffix.empty()) {
        const double s = std::exp(grad_suffix.e + kt);
        const double sn = grad_suffix.m[0] * s;
        const double sd = grad_suffix.m[1] * s;
        gv[idx] += sn;
        gk[idx] += vt * sn + sd;
      }

      if (bidirectional) {
        fwd_suffix.m[2] += fwd_suffix.m[0];
        fwd_suffix.m[3] += fwd_suffix.m[1];
        fwd_suffix.decay(d);
        fwd_suffix.add(kt, {vt, 1.0, 0.0, 0.0});
      }
      grad_suffix.decay(d);
      grad_suffix.add(-L, {g, -g * yt});
    }

    gw[c] += -inv_t * gw_acc;
    gu[c] += gu_acc;
  }
}

}  // namespace rrwkv::kernels
