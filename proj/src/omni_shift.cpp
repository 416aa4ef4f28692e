#include "rrwkv/omni_shift.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rrwkv/errors.hpp"
#include "rrwkv/ops.hpp"

namespace rrwkv {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

void check_input(const Tensor& x, std::size_t channels, const char* op) {
  if (x.rank() != 3 || x.dim(0) == 0 || x.dim(1) == 0) {
    throw ShapeError(std::string(op) + ": expected a non-empty H x W x C image, got " +
                     shape_str(x.shape()));
  }
  if (x.dim(2) != channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(2)) +
                     " channels, params have " + std::to_string(channels));
  }
}

// Row/column offset of the neighbour each direction pulls in.
struct Offset {
  int dh, dw;
};
constexpr std::array<Offset, 4> kDirections{{{0, -1}, {0, 1}, {-1, 0}, {1, 0}}};

// out[h,w,c] = (1 - m) x[h,w,c] + m x[h+dh, w+dw, c], zero outside the image.
// group_of[c] selects both the direction and the mix coefficient of channel c.
Tensor interp_shift(const Tensor& x, const Tensor& mix, std::vector<std::size_t> group_of,
                    std::vector<Offset> offsets) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const auto xv = x.data();
  const auto m = mix.data();
  auto neighbour = [=](std::size_t h, std::size_t w, std::size_t c) -> double {
    const Offset o = offsets[group_of[c]];
    const long hh = static_cast<long>(h) + o.dh, ww = static_cast<long>(w) + o.dw;
    if (hh < 0 || ww < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W)) return 0.0;
    return xv[(static_cast<std::size_t>(hh) * W + static_cast<std::size_t>(ww)) * C + c];
  };
  Tensor out(x.shape());
  auto ov = out.mutable_data();
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const double mc = m[group_of[c]];
        const std::size_t i = (h * W + w) * C + c;
        ov[i] = (1.0 - mc) * xv[i] + mc * neighbour(h, w, c);
      }
  if (!autograd::should_record({&x, &mix})) return out;
  out.set_requires_grad(true);
  autograd::tape().record([xi = x.impl(), mi = mix.impl(), oi = out.impl(), group_of, offsets, H,
                           W, C] {
    if (!oi->has_grad) return;
    const auto& g = oi->grad;
    const auto& xd = xi->data;
    const auto& md = mi->data;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (h * W + w) * C + c;
          const Offset o = offsets[group_of[c]];
          const long hh = static_cast<long>(h) + o.dh, ww = static_cast<long>(w) + o.dw;
          const bool inside =
              hh >= 0 && ww >= 0 && hh < static_cast<long>(H) && ww < static_cast<long>(W);
          const std::size_t j =
              inside ? (static_cast<std::size_t>(hh) * W + static_cast<std::size_t>(ww)) * C + c
                     : 0;
          const double mc = md[group_of[c]];
          if (xi->requires_grad) {
            auto& gx = xi->grad_buffer();
            gx[i] += (1.0 - mc) * g[i];
            if (inside) gx[j] += mc * g[i];
          }
          if (mi->requires_grad) {
            const double nb = inside ? xd[j] : 0.0;
            mi->grad_buffer()[group_of[c]] += g[i] * (nb - xd[i]);
          }
        }
  });
  return out;
}

}  // namespace

OmniShiftParams OmniShiftParams::init(std::size_t channels, Rng& rng) {
  OmniShiftParams p;
  p.k5 = normal_tensor({5, 5, channels}, rng, 1e-3);
  p.k3 = normal_tensor({3, 3, channels}, rng, 1e-3);
  p.k1 = Tensor(Shape{1, 1, channels}, 1.0);
  p.alpha = Tensor(Shape{4}, 1.0);
  for (Tensor* t : {&p.k5, &p.k3, &p.k1, &p.alpha}) t->set_requires_grad(true);
  return p;
}

Tensor fused_kernel(const OmniShiftParams& p) {
  const std::size_t C = p.channels();
  if (p.k5.shape() != Shape{5, 5, C} || p.k3.shape() != Shape{3, 3, C} ||
      p.alpha.numel() != 4) {
    throw ShapeError("omni_shift: inconsistent branch shapes");
  }
  const auto a = p.alpha.data();
  std::vector<double> f(25 * C);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = a[0] * p.k5[i];
  for (std::size_t dy = 0; dy < 3; ++dy)
    for (std::size_t dx = 0; dx < 3; ++dx)
      for (std::size_t c = 0; c < C; ++c)
        f[((dy + 1) * 5 + dx + 1) * C + c] += a[1] * p.k3[(dy * 3 + dx) * C + c];
  for (std::size_t c = 0; c < C; ++c) f[(2 * 5 + 2) * C + c] += a[2] * p.k1[c] + a[3];
  return Tensor(Shape{5, 5, C}, std::move(f));
}

OmniShiftParams fuse(const OmniShiftParams& p) {
  if (p.mode == ShiftMode::fused) throw StateError("omni_shift: parameters are already fused");
  OmniShiftParams out = p;
  out.fused = fused_kernel(p);
  out.mode = ShiftMode::fused;
  return out;
}

Tensor omni_shift(const Tensor& x, const OmniShiftParams& p) {
  check_input(x, p.channels(), "omni_shift");
  if (p.mode == ShiftMode::fused) {
    if (!p.fused.defined()) throw StateError("omni_shift: fused mode without a fused kernel");
    return depthwise_conv2d(x, p.fused);
  }
  Tensor y = scale_by(depthwise_conv2d(x, p.k5), p.alpha, 0);
  y = add(y, scale_by(depthwise_conv2d(x, p.k3), p.alpha, 1));
  y = add(y, scale_by(depthwise_conv2d(x, p.k1), p.alpha, 2));
  return add(y, scale_by(x, p.alpha, 3));
}

Tensor uni_shift(const Tensor& x, const Tensor& mix) {
  check_input(x, x.rank() == 3 ? x.dim(2) : 0, "uni_shift");
  if (mix.numel() != 1) throw ShapeError("uni_shift: expects a single mix coefficient");
  return interp_shift(x, mix, std::vector<std::size_t>(x.dim(2), 0), {kDirections[0]});
}

Tensor quad_shift(const Tensor& x, const Tensor& mix) {
  check_input(x, x.rank() == 3 ? x.dim(2) : 0, "quad_shift");
  const std::size_t C = x.dim(2);
  if (C % 4 != 0) {
    throw ConfigError("quad_shift: channel count " + std::to_string(C) + " is not divisible by 4");
  }
  if (mix.numel() != 4) throw ShapeError("quad_shift: expects four mix coefficients");
  std::vector<std::size_t> group_of(C);
  for (std::size_t c = 0; c < C; ++c) group_of[c] = c / (C / 4);
  return interp_shift(x, mix, std::move(group_of), {kDirections.begin(), kDirections.end()});
}

}  // namespace rrwkv
