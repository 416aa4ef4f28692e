#include "rrwkv/wkv.hpp"

#include <memory>
#include <string>

#include "rrwkv/errors.hpp"
#include "rrwkv/kernels/wkv.hpp"

namespace rrwkv {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

kernels::WkvShape check_operands(const Tensor& k, const Tensor& v, const WkvParams& p) {
  if (k.rank() != 2 || k.shape() != v.shape()) {
    throw ShapeError("wkv: k and v must be matching T x C tensors, got " + shape_str(k.shape()) +
                     " and " + shape_str(v.shape()));
  }
  const kernels::WkvShape s{k.dim(0), k.dim(1)};
  if (s.tokens == 0) throw ShapeError("wkv: empty sequence (T = 0)");
  if (p.w.numel() != s.channels || p.u.numel() != s.channels) {
    throw ShapeError("wkv: parameters sized for " + std::to_string(p.w.numel()) +
                     " channels, input has " + std::to_string(s.channels));
  }
  return s;
}

Tensor wkv_op(const Tensor& k, const Tensor& v, const WkvParams& p, kernels::WkvMode mode) {
  const auto s = check_operands(k, v, p);
  Tensor y(k.shape());
  auto log_den = std::make_shared<std::vector<double>>(k.numel());
  kernels::wkv_forward(k.data(), v.data(), p.w.data(), p.u.data(), s, mode, y.mutable_data(),
                       *log_den);
  if (autograd::should_record({&k, &v, &p.w, &p.u})) {
    y.set_requires_grad(true);
    autograd::tape().record([ki = k.impl(), vi = v.impl(), wi = p.w.impl(), ui = p.u.impl(),
                             yi = y.impl(), log_den, s, mode] {
      if (!yi->has_grad) return;
      // The kernel accumulates every gradient; route unused ones to scratch.
      auto pick = [](const Impl& t, std::vector<double>& scratch) -> std::span<double> {
        if (t->requires_grad) return t->grad_buffer();
        scratch.assign(t->data.size(), 0.0);
        return scratch;
      };
      std::vector<double> sk, sv, sw, su;
      kernels::wkv_backward(ki->data, vi->data, wi->data, ui->data, yi->data, *log_den, yi->grad,
                            s, mode, pick(ki, sk), pick(vi, sv), pick(wi, sw), pick(ui, su));
    });
  }
  return y;
}

Tensor oracle(const Tensor& k, const Tensor& v, const WkvParams& p, kernels::WkvMode mode) {
  const auto s = check_operands(k, v, p);
  Tensor y(k.shape());
  kernels::wkv_oracle(k.data(), v.data(), p.w.data(), p.u.data(), s, mode, y.mutable_data());
  return y;
}

Tensor permute_rows(const Tensor& x, std::shared_ptr<std::vector<std::size_t>> src) {
  const std::size_t T = x.dim(0), C = x.dim(1);
  std::vector<double> out(T * C);
  const auto v = x.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out[t * C + c] = v[(*src)[t] * C + c];
  Tensor y(x.shape(), std::move(out));
  if (autograd::should_record({&x})) {
    y.set_requires_grad(true);
    autograd::tape().record([xi = x.impl(), yi = y.impl(), src, T, C] {
      if (!yi->has_grad) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) gx[(*src)[t] * C + c] += yi->grad[t * C + c];
    });
  }
  return y;
}

void check_order(const Tensor& x, const ScanOrder& order) {
  if (x.rank() != 2 || x.dim(0) != order.tokens()) {
    throw ShapeError("scan order " + std::to_string(order.height) + "x" +
                     std::to_string(order.width) + " does not match tensor " + shape_str(x.shape()));
  }
}

}  // namespace

WkvParams WkvParams::init(std::size_t channels, Rng& rng) {
  WkvParams p;
  p.w = uniform_tensor(Shape{channels}, rng, 0.5, 3.0);
  p.u = uniform_tensor(Shape{channels}, rng, -0.5, 0.5);
  p.w.set_requires_grad(true);
  p.u.set_requires_grad(true);
  return p;
}

std::size_t ScanOrder::index(std::size_t h, std::size_t w) const {
  return direction == ScanDirection::horizontal ? h * width + w : w * height + h;
}

std::vector<std::size_t> ScanOrder::permutation() const {
  std::vector<std::size_t> perm(tokens());
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) perm[index(h, w)] = h * width + w;
  return perm;
}

std::vector<std::size_t> ScanOrder::inverse() const {
  std::vector<std::size_t> inv(tokens());
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) inv[h * width + w] = index(h, w);
  return inv;
}

ScanDirection scan_direction_for(std::size_t recurrence) {
  return recurrence % 2 == 1 ? ScanDirection::horizontal : ScanDirection::vertical;
}

Tensor to_scan_order(const Tensor& x, const ScanOrder& order) {
  check_order(x, order);
  if (order.direction == ScanDirection::horizontal) return x;
  return permute_rows(x, std::make_shared<std::vector<std::size_t>>(order.permutation()));
}

Tensor from_scan_order(const Tensor& x, const ScanOrder& order) {
  check_order(x, order);
  if (order.direction == ScanDirection::horizontal) return x;
  return permute_rows(x, std::make_shared<std::vector<std::size_t>>(order.inverse()));
}

Tensor bi_wkv(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return wkv_op(k, v, p, kernels::WkvMode::bidirectional);
}

Tensor uni_wkv(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return wkv_op(k, v, p, kernels::WkvMode::causal);
}

Tensor bi_wkv_oracle(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return oracle(k, v, p, kernels::WkvMode::bidirectional);
}

Tensor uni_wkv_oracle(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return oracle(k, v, p, kernels::WkvMode::causal);
}

Tensor re_wkv(const Tensor& k, const Tensor& v, std::span<const WkvParams> params,
              std::size_t height, std::size_t width) {
  if (params.empty()) throw ConfigError("re_wkv: recurrence count M must be at least 1");
  if (k.rank() != 2 || k.dim(0) != height * width) {
    throw ShapeError("re_wkv: T = " + std::to_string(k.rank() ? k.dim(0) : 0) +
                     " does not equal H*W = " + std::to_string(height * width));
  }
  Tensor wkv = v;
  for (std::size_t j = 1; j <= params.size(); ++j) {
    const ScanOrder order{scan_direction_for(j), height, width};
    const Tensor ks = to_scan_order(k, order);
    const Tensor vs = to_scan_order(wkv, order);
    wkv = from_scan_order(bi_wkv(ks, vs, params[j - 1]), order);
  }
  return wkv;
}

}  // namespace rrwkv
