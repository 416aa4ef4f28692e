#include "rrwkv/blocks.hpp"

#include <cmath>

#include "rrwkv/errors.hpp"
#include "rrwkv/ops.hpp"

namespace rrwkv {

namespace {

Tensor projection(std::size_t in, std::size_t out, Rng& rng) {
  Tensor w = normal_tensor({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  w.set_requires_grad(true);
  return w;
}

Tensor zeros(Shape s) {
  Tensor t(std::move(s), 0.0);
  t.set_requires_grad(true);
  return t;
}

void check_tokens(const Tensor& x, std::size_t height, std::size_t width, std::size_t channels,
                  const char* op) {
  if (x.rank() != 2 || x.dim(0) != height * width || x.dim(1) != channels) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(height * width) + " x " +
                     std::to_string(channels) + " tokens for a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid, got " + shape_str(x.shape()));
  }
}

// LN then token shift, in token layout.
Tensor norm_and_shift(const Tensor& x, std::size_t height, std::size_t width,
                      const LayerNormParams& ln, const TokenShift& shift) {
  const std::size_t C = x.dim(1);
  const Tensor n = layer_norm(x, ln.gamma, ln.beta);
  return reshape(shift.apply(reshape(n, {height, width, C})), {height * width, C});
}

}  // namespace

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::re_wkv: return "re-wkv";
    case AttentionKind::bi_wkv: return "bi-wkv";
    case AttentionKind::uni_wkv: return "uni-wkv";
  }
  return "?";
}

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::omni: return "omni";
    case ShiftKind::quad: return "quad";
    case ShiftKind::uni: return "uni";
  }
  return "?";
}

AttentionKind parse_attention(const std::string& name) {
  for (auto k : {AttentionKind::re_wkv, AttentionKind::bi_wkv, AttentionKind::uni_wkv})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown attention kind '" + name + "' (expected re-wkv, bi-wkv, uni-wkv)");
}

ShiftKind parse_shift(const std::string& name) {
  for (auto k : {ShiftKind::omni, ShiftKind::quad, ShiftKind::uni})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown shift kind '" + name + "' (expected omni, quad, uni)");
}

LayerNormParams LayerNormParams::init(std::size_t channels) {
  LayerNormParams p{Tensor(Shape{channels}, 1.0), Tensor(Shape{channels}, 0.0)};
  p.gamma.set_requires_grad(true);
  p.beta.set_requires_grad(true);
  return p;
}

TokenShift TokenShift::init(ShiftKind kind, std::size_t channels, Rng& rng) {
  TokenShift s;
  s.kind = kind;
  switch (kind) {
    case ShiftKind::omni:
      s.omni = OmniShiftParams::init(channels, rng);
      break;
    case ShiftKind::quad:
      if (channels % 4 != 0) {
        throw ConfigError("quad shift needs channels divisible by 4, got " +
                          std::to_string(channels));
      }
      s.mix = Tensor(Shape{4}, 0.5);
      break;
    case ShiftKind::uni:
      s.mix = Tensor(Shape{1}, 0.5);
      break;
  }
  if (s.mix.defined()) s.mix.set_requires_grad(true);
  return s;
}

Tensor TokenShift::apply(const Tensor& x) const {
  switch (kind) {
    case ShiftKind::omni: return omni_shift(x, omni);
    case ShiftKind::quad: return quad_shift(x, mix);
    case ShiftKind::uni: return uni_shift(x, mix);
  }
  return x;
}

void TokenShift::fuse() {
  if (kind == ShiftKind::omni && omni.mode == ShiftMode::train) omni = rrwkv::fuse(omni);
}

void TokenShift::collect(const std::string& prefix, NamedTensors& out) const {
  if (kind == ShiftKind::omni) {
    out.emplace_back(prefix + ".k5", omni.k5);
    out.emplace_back(prefix + ".k3", omni.k3);
    out.emplace_back(prefix + ".k1", omni.k1);
    out.emplace_back(prefix + ".alpha", omni.alpha);
  } else {
    out.emplace_back(prefix + ".mix", mix);
  }
}

SpatialMixParams SpatialMixParams::init(const BlockConfig& cfg, Rng& rng) {
  const std::size_t C = cfg.channels;
  if (cfg.attention == AttentionKind::re_wkv && cfg.recurrences == 0)
    throw ConfigError("re-wkv needs at least one recurrence");
  SpatialMixParams p;
  p.ln = LayerNormParams::init(C);
  p.shift = TokenShift::init(cfg.shift, C, rng);
  p.w_r = projection(C, C, rng);
  p.w_k = projection(C, C, rng);
  p.w_v = projection(C, C, rng);
  p.w_o = zeros({C, C});
  p.attention = cfg.attention;
  const std::size_t M = cfg.attention == AttentionKind::re_wkv ? cfg.recurrences : 1;
  for (std::size_t j = 0; j < M; ++j) p.attn.push_back(WkvParams::init(C, rng));
  return p;
}

void SpatialMixParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".ln.gamma", ln.gamma);
  out.emplace_back(prefix + ".ln.beta", ln.beta);
  shift.collect(prefix + ".shift", out);
  out.emplace_back(prefix + ".w_r", w_r);
  out.emplace_back(prefix + ".w_k", w_k);
  out.emplace_back(prefix + ".w_v", w_v);
  out.emplace_back(prefix + ".w_o", w_o);
  for (std::size_t j = 0; j < attn.size(); ++j) {
    out.emplace_back(prefix + ".attn" + std::to_string(j + 1) + ".w", attn[j].w);
    out.emplace_back(prefix + ".attn" + std::to_string(j + 1) + ".u", attn[j].u);
  }
}

ChannelMixParams ChannelMixParams::init(const BlockConfig& cfg, Rng& rng) {
  const std::size_t C = cfg.channels;
  if (cfg.hidden_ratio == 0) throw ConfigError("channel-mix hidden ratio must be at least 1");
  const std::size_t Ch = C * cfg.hidden_ratio;
  ChannelMixParams p;
  p.ln = LayerNormParams::init(C);
  p.shift = TokenShift::init(cfg.shift, C, rng);
  p.w_r = projection(C, C, rng);
  p.w_k = projection(C, Ch, rng);
  p.w_v = projection(Ch, C, rng);
  p.w_o = zeros({C, C});
  return p;
}

void ChannelMixParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".ln.gamma", ln.gamma);
  out.emplace_back(prefix + ".ln.beta", ln.beta);
  shift.collect(prefix + ".shift", out);
  out.emplace_back(prefix + ".w_r", w_r);
  out.emplace_back(prefix + ".w_k", w_k);
  out.emplace_back(prefix + ".w_v", w_v);
  out.emplace_back(prefix + ".w_o", w_o);
}

BlockParams BlockParams::init(const BlockConfig& cfg, Rng& rng) {
  BlockParams b;
  b.spatial = SpatialMixParams::init(cfg, rng);
  b.channel = ChannelMixParams::init(cfg, rng);
  return b;
}

void BlockParams::fuse() {
  spatial.shift.fuse();
  channel.shift.fuse();
}

void BlockParams::collect(const std::string& prefix, NamedTensors& out) const {
  spatial.collect(prefix + ".spatial", out);
  channel.collect(prefix + ".channel", out);
}

Tensor attention(const Tensor& k, const Tensor& v, const SpatialMixParams& p, std::size_t height,
                 std::size_t width) {
  switch (p.attention) {
    case AttentionKind::re_wkv: return re_wkv(k, v, p.attn, height, width);
    case AttentionKind::bi_wkv: return bi_wkv(k, v, p.attn.at(0));
    case AttentionKind::uni_wkv: return uni_wkv(k, v, p.attn.at(0));
  }
  return v;
}

Tensor spatial_mix(const Tensor& x, std::size_t height, std::size_t width,
                   const SpatialMixParams& p) {
  check_tokens(x, height, width, p.w_r.dim(0), "spatial_mix");
  const Tensor xs = norm_and_shift(x, height, width, p.ln, p.shift);
  const Tensor r = matmul(xs, p.w_r);
  const Tensor k = matmul(xs, p.w_k);
  const Tensor v = matmul(xs, p.w_v);
  const Tensor wkv = attention(k, v, p, height, width);
  return matmul(mul(sigmoid(r), wkv), p.w_o);
}

Tensor channel_mix(const Tensor& x, std::size_t height, std::size_t width,
                   const ChannelMixParams& p) {
  check_tokens(x, height, width, p.w_r.dim(0), "channel_mix");
  const Tensor xc = norm_and_shift(x, height, width, p.ln, p.shift);
  const Tensor r = matmul(xc, p.w_r);
  const Tensor k = matmul(xc, p.w_k);
  const Tensor v = matmul(squared_relu(k), p.w_v);
  return matmul(mul(sigmoid(r), v), p.w_o);
}

Tensor r_rwkv_block(const Tensor& x, std::size_t height, std::size_t width,
                    const BlockParams& p) {
  const Tensor x1 = add(x, spatial_mix(x, height, width, p.spatial));
  return add(x1, channel_mix(x1, height, width, p.channel));
}

}  // namespace rrwkv
