#include "rrwkv/ops.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rrwkv/errors.hpp"
#include "rrwkv/kernels/dense.hpp"
#include "rrwkv/kernels/depthwise.hpp"

namespace rrwkv {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

kernels::Grid grid_of(const Tensor& x) { return {x.dim(0), x.dim(1), x.dim(2)}; }

// Result tensor that participates in the graph iff any input requires grad.
template <typename F>
Tensor finish(Tensor result, std::initializer_list<const Tensor*> inputs, F&& make_backward) {
  if (autograd::should_record(inputs)) {
    result.set_requires_grad(true);
    autograd::tape().record(make_backward(result.impl()));
  }
  return result;
}

template <typename F>
void parallel_for(std::size_t n, F&& f) {
  const auto N = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < N; ++i) f(static_cast<std::size_t>(i));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  kernels::gemm(false, false, m, n, k, a.data(), b.data(), out.mutable_data(), false);
  return finish(std::move(out), {&a, &b}, [ai = a.impl(), bi = b.impl(), m, n, k](Impl ri) {
    return [ai, bi, ri, m, n, k] {
      if (!ri->has_grad) return;
      if (ai->requires_grad)
        kernels::gemm(false, true, m, k, n, ri->grad, bi->data, ai->grad_buffer(), true);
      if (bi->requires_grad)
        kernels::gemm(true, false, k, n, m, ai->data, ri->grad, bi->grad_buffer(), true);
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] + y[i]; });
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b},
                [ai = a.impl(), bi = b.impl()](Impl ri) {
                  return [ai, bi, ri] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    if (ai->requires_grad) {
                      auto& ga = ai->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    }
                  };
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] - y[i]; });
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b},
                [ai = a.impl(), bi = b.impl()](Impl ri) {
                  return [ai, bi, ri] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    if (ai->requires_grad) {
                      auto& ga = ai->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    }
                  };
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] * y[i]; });
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b},
                [ai = a.impl(), bi = b.impl()](Impl ri) {
                  return [ai, bi, ri] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    if (ai->requires_grad) {
                      auto& ga = ai->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
                    }
                  };
                });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  const auto v = x.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = v[i] * s; });
  return finish(Tensor(x.shape(), std::move(out)), {&x}, [xi = x.impl(), s](Impl ri) {
    return [xi, ri, s] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ri->grad[i] * s;
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::size_t C = bias.dim(0);
  std::vector<double> out(x.numel());
  const auto v = x.data(), b = bias.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = v[i] + b[i % C]; });
  return finish(Tensor(x.shape(), std::move(out)), {&x, &bias},
                [xi = x.impl(), bi = bias.impl(), C](Impl ri) {
                  return [xi, bi, ri, C] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    if (xi->requires_grad) {
                      auto& gx = xi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % C] += g[i];
                    }
                  };
                });
}

Tensor scale_by(const Tensor& x, const Tensor& alpha, std::size_t index) {
  if (index >= alpha.numel()) throw ShapeError("scale_by: index out of range");
  const double s = alpha[index];
  std::vector<double> out(x.numel());
  const auto v = x.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = v[i] * s; });
  return finish(Tensor(x.shape(), std::move(out)), {&x, &alpha},
                [xi = x.impl(), ai = alpha.impl(), index](Impl ri) {
                  return [xi, ai, ri, index] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    const double s = ai->data[index];
                    if (xi->requires_grad) {
                      auto& gx = xi->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
                    }
                    if (ai->requires_grad) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xi->data[i];
                      ai->grad_buffer()[index] += acc;
                    }
                  };
                });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto v = x.data();
  parallel_for(out.size(), [&](std::size_t i) {
    const double z = v[i];
    if (z >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-z));
    } else {
      const double e = std::exp(z);
      out[i] = e / (1.0 + e);
    }
  });
  return finish(Tensor(x.shape(), std::move(out)), {&x}, [xi = x.impl()](Impl ri) {
    return [xi, ri] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      const auto& y = ri->data;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ri->grad[i] * y[i] * (1.0 - y[i]);
    };
  });
}

Tensor squared_relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto v = x.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = v[i] > 0 ? v[i] * v[i] : 0.0; });
  return finish(Tensor(x.shape(), std::move(out)), {&x}, [xi = x.impl()](Impl ri) {
    return [xi, ri] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      const auto& v = xi->data;
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (v[i] > 0) gx[i] += ri->grad[i] * 2.0 * v[i];
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t C = x.shape().back();
  if (C == 0) throw ShapeError("layer_norm: zero-width rows");
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("layer_norm: affine size mismatch");
  const std::size_t rows = x.numel() / C;

  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto v = x.data(), ga = gamma.data(), be = beta.data();
  parallel_for(rows, [&](std::size_t r) {
    const double* row = v.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const double xh = (row[c] - mu) * is;
      (*xhat)[r * C + c] = xh;
      out[r * C + c] = ga[c] * xh + be[c];
    }
  });

  return finish(Tensor(x.shape(), std::move(out)), {&x, &gamma, &beta},
                [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat, inv_std, rows,
                 C](Impl ri) {
                  return [xi, gi, bi, ri, xhat, inv_std, rows, C] {
                    if (!ri->has_grad) return;
                    const auto& g = ri->grad;
                    const auto& xh = *xhat;
                    if (xi->requires_grad) {
                      auto& gx = xi->grad_buffer();
                      const auto& gam = gi->data;
                      parallel_for(rows, [&](std::size_t r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                          const double d = g[r * C + c] * gam[c];
                          m1 += d;
                          m2 += d * xh[r * C + c];
                        }
                        m1 /= static_cast<double>(C);
                        m2 /= static_cast<double>(C);
                        const double is = (*inv_std)[r];
                        for (std::size_t c = 0; c < C; ++c) {
                          const double d = g[r * C + c] * gam[c];
                          gx[r * C + c] += is * (d - m1 - xh[r * C + c] * m2);
                        }
                      });
                    }
                    if (gi->requires_grad) {
                      auto& gg = gi->grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < C; ++c) gg[c] += g[r * C + c] * xh[r * C + c];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
                    }
                  };
                });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  require_rank(x, 3, "depthwise_conv2d");
  require_rank(kernel, 3, "depthwise_conv2d");
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0 || kernel.dim(1) != k) {
    throw ConfigError("depthwise_conv2d: kernel must be square with odd size, got " +
                      shape_str(kernel.shape()));
  }
  if (kernel.dim(2) != x.dim(2)) throw ShapeError("depthwise_conv2d: channel mismatch");
  const auto g = grid_of(x);
  Tensor out(x.shape());
  kernels::depthwise_conv2d(x.data(), g, kernel.data(), k, out.mutable_data());
  return finish(std::move(out), {&x, &kernel},
                [xi = x.impl(), ki = kernel.impl(), g, k](Impl ri) {
                  return [xi, ki, ri, g, k] {
                    if (!ri->has_grad) return;
                    std::span<double> gx, gk;
                    if (xi->requires_grad) gx = xi->grad_buffer();
                    if (ki->requires_grad) gk = ki->grad_buffer();
                    kernels::depthwise_conv2d_backward(xi->data, g, ki->data, k, ri->grad, gx, gk);
                  };
                });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t k = weight.dim(0);
  if (k % 2 == 0 || weight.dim(1) != k) throw ConfigError("conv2d: kernel must be square and odd");
  if (weight.dim(2) != x.dim(2)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not accept input " +
                     shape_str(x.shape()));
  }
  const std::size_t co = weight.dim(3);
  if (bias.defined() && bias.numel() != co) throw ShapeError("conv2d: bias size mismatch");
  const auto g = grid_of(x);
  Tensor out(Shape{x.dim(0), x.dim(1), co});
  kernels::conv2d(x.data(), g, weight.data(), k, bias.data(), co, out.mutable_data());
  return finish(std::move(out), {&x, &weight, &bias},
                [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), g, k, co](Impl ri) {
                  return [xi, wi, bi, ri, g, k, co] {
                    if (!ri->has_grad) return;
                    std::span<double> gx, gw, gb;
                    if (xi->requires_grad) gx = xi->grad_buffer();
                    if (wi->requires_grad) gw = wi->grad_buffer();
                    if (bi && bi->requires_grad) gb = bi->grad_buffer();
                    kernels::conv2d_backward(xi->data, g, wi->data, k, co, ri->grad, gx, gw, gb);
                  };
                });
}

namespace {

// Flat index maps for the shuffle pair; forward of one is the backward of the other.
std::vector<std::size_t> unshuffle_map(std::size_t H, std::size_t W, std::size_t C, std::size_t r) {
  const std::size_t h2 = H / r, w2 = W / r, c2 = C * r * r;
  std::vector<std::size_t> src(H * W * C);
  for (std::size_t h = 0; h < h2; ++h)
    for (std::size_t w = 0; w < w2; ++w)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t dy = 0; dy < r; ++dy)
          for (std::size_t dx = 0; dx < r; ++dx) {
            const std::size_t o = (h * w2 + w) * c2 + c * r * r + dy * r + dx;
            src[o] = ((h * r + dy) * W + (w * r + dx)) * C + c;
          }
  return src;
}

// out[i] = in[src[i]] with the matching scatter backward.
Tensor gather(const Tensor& x, Shape shape, std::shared_ptr<std::vector<std::size_t>> src) {
  std::vector<double> out(src->size());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*src)[i]];
  return finish(Tensor(std::move(shape), std::move(out)), {&x}, [xi = x.impl(), src](Impl ri) {
    return [xi, ri, src] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += ri->grad[i];
    };
  });
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  require_rank(x, 3, "pixel_unshuffle");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (r == 0 || H % r || W % r) {
    throw ShapeError("pixel_unshuffle: " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(r));
  }
  auto src = std::make_shared<std::vector<std::size_t>>(unshuffle_map(H, W, C, r));
  return gather(x, Shape{H / r, W / r, C * r * r}, std::move(src));
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  require_rank(x, 3, "pixel_shuffle");
  const std::size_t h = x.dim(0), w = x.dim(1), c2 = x.dim(2);
  if (r == 0 || c2 % (r * r)) {
    throw ShapeError("pixel_shuffle: channels of " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(r * r));
  }
  const std::size_t H = h * r, W = w * r, C = c2 / (r * r);
  // Invert the unshuffle map: shuffled[src[o]] = x[o].
  const auto fwd = unshuffle_map(H, W, C, r);
  auto src = std::make_shared<std::vector<std::size_t>>(fwd.size());
  for (std::size_t o = 0; o < fwd.size(); ++o) (*src)[fwd[o]] = o;
  return gather(x, Shape{H, W, C}, std::move(src));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t T = a.dim(0) * a.dim(1), ca = a.dim(2), cb = b.dim(2), cc = ca + cb;
  std::vector<double> out(T * cc);
  const auto va = a.data(), vb = b.data();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < ca; ++c) out[t * cc + c] = va[t * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out[t * cc + ca + c] = vb[t * cb + c];
  }
  return finish(Tensor(Shape{a.dim(0), a.dim(1), cc}, std::move(out)), {&a, &b},
                [ai = a.impl(), bi = b.impl(), T, ca, cb](Impl ri) {
                  return [ai, bi, ri, T, ca, cb] {
                    if (!ri->has_grad) return;
                    const std::size_t cc = ca + cb;
                    const auto& g = ri->grad;
                    if (ai->requires_grad) {
                      auto& ga = ai->grad_buffer();
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t c = 0; c < ca; ++c) ga[t * ca + c] += g[t * cc + c];
                    }
                    if (bi->requires_grad) {
                      auto& gb = bi->grad_buffer();
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t c = 0; c < cb; ++c) gb[t * cb + c] += g[t * cc + ca + c];
                    }
                  };
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return finish(Tensor(std::move(shape), std::move(out)), {&x}, [xi = x.impl()](Impl ri) {
    return [xi, ri] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ri->grad[i];
    };
  });
}

Tensor reflect_pad(const Tensor& x, std::size_t pad_bottom, std::size_t pad_right) {
  require_rank(x, 3, "reflect_pad");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if ((pad_bottom && pad_bottom >= H) || (pad_right && pad_right >= W)) {
    throw ShapeError("reflect_pad: padding must be smaller than the image side");
  }
  const std::size_t Ho = H + pad_bottom, Wo = W + pad_right;
  auto src = std::make_shared<std::vector<std::size_t>>(Ho * Wo * C);
  for (std::size_t h = 0; h < Ho; ++h) {
    const std::size_t sh = h < H ? h : 2 * (H - 1) - h;
    for (std::size_t w = 0; w < Wo; ++w) {
      const std::size_t sw = w < W ? w : 2 * (W - 1) - w;
      for (std::size_t c = 0; c < C; ++c) (*src)[(h * Wo + w) * C + c] = (sh * W + sw) * C + c;
    }
  }
  return gather(x, Shape{Ho, Wo, C}, std::move(src));
}

Tensor crop(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank(x, 3, "crop");
  const std::size_t W = x.dim(1), C = x.dim(2);
  if (height > x.dim(0) || width > W) throw ShapeError("crop: window larger than image");
  auto src = std::make_shared<std::vector<std::size_t>>(height * width * C);
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w)
      for (std::size_t c = 0; c < C; ++c) (*src)[(h * width + w) * C + c] = (h * W + w) * C + c;
  return gather(x, Shape{height, width, C}, std::move(src));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return finish(Tensor::scalar(s), {&x}, [xi = x.impl()](Impl ri) {
    return [xi, ri] {
      if (!ri->has_grad) return;
      auto& gx = xi->grad_buffer();
      for (auto& g : gx) g += ri->grad[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor select(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) throw ShapeError("select: index out of range");
  return finish(Tensor::scalar(x[index]), {&x}, [xi = x.impl(), index](Impl ri) {
    return [xi, ri, index] {
      if (!ri->has_grad) return;
      xi->grad_buffer()[index] += ri->grad[0];
    };
  });
}

}  // namespace rrwkv
