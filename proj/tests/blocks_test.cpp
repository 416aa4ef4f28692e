#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rrwkv/blocks.hpp"
#include "rrwkv/errors.hpp"
#include "rrwkv/ops.hpp"
#include "test_util.hpp"

namespace rrwkv {
namespace {

using testing::check_gradients;
using testing::max_abs_diff;

Tensor random_like(const Tensor& t, Rng& rng, double scale = 0.5) {
  Tensor r = uniform_tensor(t.shape(), rng, -scale, scale);
  r.set_requires_grad(true);
  return r;
}

// A block whose output projections are random, so every path is live.
BlockParams live_block(const BlockConfig& cfg, Rng& rng) {
  BlockParams b = BlockParams::init(cfg, rng);
  b.spatial.w_o = random_like(b.spatial.w_o, rng);
  b.channel.w_o = random_like(b.channel.w_o, rng);
  if (cfg.shift == ShiftKind::omni) {
    for (auto* s : {&b.spatial.shift, &b.channel.shift}) {
      s->omni.k5 = random_like(s->omni.k5, rng, 0.2);
      s->omni.k3 = random_like(s->omni.k3, rng, 0.2);
    }
  }
  return b;
}

// Straight-line spatial mix built from primitives, with the quadratic oracle
// standing in for the scan and explicit index loops for the V-Scan order.
Tensor spatial_reference(const Tensor& x, std::size_t H, std::size_t W,
                         const SpatialMixParams& p) {
  const std::size_t C = x.dim(1);
  const Tensor n = layer_norm(x, p.ln.gamma, p.ln.beta);
  const Tensor xs = reshape(omni_shift(reshape(n, {H, W, C}), p.shift.omni), {H * W, C});
  const Tensor r = matmul(xs, p.w_r), k = matmul(xs, p.w_k), v = matmul(xs, p.w_v);
  auto transpose_grid = [&](const Tensor& t, std::size_t rows, std::size_t cols) {
    Tensor out(t.shape());
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t b = 0; b < cols; ++b)
        for (std::size_t c = 0; c < C; ++c)
          out.mutable_data()[(b * rows + a) * C + c] = t[(a * cols + b) * C + c];
    return out;
  };
  Tensor wkv = v;
  for (std::size_t j = 0; j < p.attn.size(); ++j) {
    if (j % 2 == 0) {
      wkv = bi_wkv_oracle(k, wkv, p.attn[j]);
    } else {
      wkv = transpose_grid(
          bi_wkv_oracle(transpose_grid(k, H, W), transpose_grid(wkv, H, W), p.attn[j]), W, H);
    }
  }
  return matmul(mul(sigmoid(r), wkv), p.w_o);
}

TEST(SpatialMix, ZeroOutputProjectionGivesZeros) {
  Rng rng(1);
  const auto p = SpatialMixParams::init({8}, rng);
  const Tensor x = uniform_tensor({12, 8}, rng, -1, 1);
  for (double v : spatial_mix(x, 3, 4, p).data()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialMix, SingleTokenClosedForm) {
  Rng rng(2);
  BlockConfig cfg{4};
  auto p = live_block(cfg, rng).spatial;
  const Tensor x = uniform_tensor({1, 4}, rng, -1, 1);
  const Tensor n = layer_norm(x, p.ln.gamma, p.ln.beta);
  const Tensor xs = reshape(omni_shift(reshape(n, {1, 1, 4}), p.shift.omni), {1, 4});
  const Tensor want = matmul(mul(sigmoid(matmul(xs, p.w_r)), matmul(xs, p.w_v)), p.w_o);
  EXPECT_LE(max_abs_diff(spatial_mix(x, 1, 1, p), want), 1e-14);
}

TEST(SpatialMix, MatchesPrimitiveComposition) {
  Rng rng(3);
  for (std::size_t M : {1, 2, 3}) {
    BlockConfig cfg{4, 4, M};
    const auto p = live_block(cfg, rng).spatial;
    const Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
    EXPECT_LE(max_abs_diff(spatial_mix(x, 2, 3, p), spatial_reference(x, 2, 3, p)), 1e-10)
        << "M=" << M;
  }
}

TEST(SpatialMix, PointwiseShiftPreservesConstantInput) {
  // With only the 1x1 and identity branches live, no border effect exists and
  // a constant token field stays constant everywhere.
  Rng rng(4);
  auto p = live_block({8}, rng).spatial;
  p.shift.omni.k5 = Tensor(p.shift.omni.k5.shape());
  p.shift.omni.k3 = Tensor(p.shift.omni.k3.shape());
  const Tensor row = uniform_tensor({1, 8}, rng, -1, 1);
  Tensor x(Shape{64, 8});
  for (std::size_t t = 0; t < 64; ++t)
    for (std::size_t c = 0; c < 8; ++c) x.mutable_data()[t * 8 + c] = row[c];
  const Tensor y = spatial_mix(x, 8, 8, p);
  for (std::size_t t = 1; t < 64; ++t)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y[t * 8 + c], y[c], 1e-12);
}

TEST(SpatialMix, ShapeMismatchThrows) {
  Rng rng(5);
  const auto p = SpatialMixParams::init({4}, rng);
  EXPECT_THROW(spatial_mix(Tensor(Shape{6, 4}), 2, 2, p), ShapeError);
  EXPECT_THROW(spatial_mix(Tensor(Shape{4, 3}), 2, 2, p), ShapeError);
}

TEST(ChannelMix, DeadReluGivesZero) {
  Rng rng(6);
  auto p = live_block({4}, rng).channel;
  // A large LN shift makes every shifted token positive; a negative W_K then
  // drives all of K below zero.
  p.ln.beta = Tensor(Shape{4}, 100.0);
  p.w_k = Tensor(p.w_k.shape(), -1.0);
  const Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
  for (double v : channel_mix(x, 2, 3, p).data()) EXPECT_EQ(v, 0.0);
}

TEST(ChannelMix, SaturatedReceptanceAndIdentityOutputGiveV) {
  Rng rng(7);
  auto p = live_block({4}, rng).channel;
  p.w_o = Tensor(Shape{4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  // beta = 100 makes every shifted token large and positive, so with an all-ones
  // W_R the receptance saturates: sigma(R) == 1 in double.
  p.ln.beta = Tensor(Shape{4}, 100.0);
  p.w_r = Tensor(Shape{4, 4}, 1.0);
  const Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
  const Tensor n = layer_norm(x, p.ln.gamma, p.ln.beta);
  const Tensor xc = reshape(omni_shift(reshape(n, {2, 3, 4}), p.shift.omni), {6, 4});
  const Tensor v = matmul(squared_relu(matmul(xc, p.w_k)), p.w_v);
  EXPECT_LE(max_abs_diff(channel_mix(x, 2, 3, p), v), 1e-9);
}

TEST(ChannelMix, MatchesPrimitiveComposition) {
  Rng rng(8);
  const auto p = live_block({4, 3}, rng).channel;
  const Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
  const Tensor n = layer_norm(x, p.ln.gamma, p.ln.beta);
  const Tensor xc = reshape(omni_shift(reshape(n, {3, 2, 4}), p.shift.omni), {6, 4});
  const Tensor k = matmul(xc, p.w_k);
  EXPECT_EQ(k.dim(1), 12u);
  const Tensor want =
      matmul(mul(sigmoid(matmul(xc, p.w_r)), matmul(squared_relu(k), p.w_v)), p.w_o);
  EXPECT_LE(max_abs_diff(channel_mix(x, 3, 2, p), want), 1e-14);
}

TEST(Block, IdentityAtInit) {
  Rng rng(9);
  for (auto a : {AttentionKind::re_wkv, AttentionKind::bi_wkv, AttentionKind::uni_wkv})
    for (auto s : {ShiftKind::omni, ShiftKind::quad, ShiftKind::uni}) {
      const auto b = BlockParams::init({8, 4, 2, a, s}, rng);
      const Tensor x = uniform_tensor({20, 8}, rng, -1, 1);
      EXPECT_EQ(max_abs_diff(r_rwkv_block(x, 4, 5, b), x), 0.0);
    }
}

TEST(Block, MatchesComposition) {
  Rng rng(10);
  const auto b = live_block({4}, rng);
  const Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
  const Tensor x1 = add(x, spatial_reference(x, 2, 3, b.spatial));
  const Tensor want = add(x1, channel_mix(x1, 2, 3, b.channel));
  EXPECT_LE(max_abs_diff(r_rwkv_block(x, 2, 3, b), want), 1e-10);
}

TEST(Block, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (auto a : {AttentionKind::re_wkv, AttentionKind::uni_wkv}) {
    auto b = live_block({4, 2, 2, a, ShiftKind::omni}, rng);
    Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
    NamedTensors named;
    b.collect("b", named);
    std::vector<Tensor> inputs{x};
    for (auto& [name, t] : named) inputs.push_back(t);
    const auto r = check_gradients([&] { return r_rwkv_block(x, 2, 3, b); }, inputs);
    EXPECT_LE(r.max_rel_err, 1e-4) << to_string(a);
  }
}

TEST(Block, GradientFlowsThroughMixPaths) {
  Rng rng(12);
  const auto b = live_block({4}, rng);
  Tensor x = uniform_tensor({6, 4}, rng, -1, 1);
  x.set_requires_grad(true);
  autograd::backward(sum(r_rwkv_block(x, 2, 3, b)));
  // The residual path alone would contribute exactly 1 to every entry.
  double off = 0;
  for (double g : x.grad()) off = std::max(off, std::abs(g - 1.0));
  EXPECT_GT(off, 1e-3);
}

TEST(Block, CollectsEveryParameterOnce) {
  Rng rng(13);
  const auto b = BlockParams::init({8, 4, 2}, rng);
  NamedTensors named;
  b.collect("blk", named);
  std::size_t total = 0;
  for (auto& [name, t] : named) {
    EXPECT_TRUE(t.requires_grad()) << name;
    total += t.numel();
  }
  // spatial: ln 16, omni 25*8+9*8+8+4, 4 projections 256, attn 2*(8+8)
  // channel: ln 16, omni 284, w_r 64, w_k 256, w_v 256, w_o 64
  EXPECT_EQ(total, (16 + 284 + 256 + 32) + (16 + 284 + 64 + 256 + 256 + 64));
}

TEST(Block, SameParamsRunOnDifferentGrids) {
  Rng rng(14);
  const auto b = live_block({4}, rng);
  EXPECT_EQ(r_rwkv_block(uniform_tensor({16, 4}, rng, -1, 1), 4, 4, b).shape(), (Shape{16, 4}));
  EXPECT_EQ(r_rwkv_block(uniform_tensor({64, 4}, rng, -1, 1), 8, 8, b).shape(), (Shape{64, 4}));
}

TEST(Block, FusedBlockMatchesTrainMode) {
  Rng rng(15);
  const auto b = live_block({4}, rng);
  auto f = b;
  f.fuse();
  const Tensor x = uniform_tensor({30, 4}, rng, -1, 1);
  EXPECT_LE(max_abs_diff(r_rwkv_block(x, 5, 6, b), r_rwkv_block(x, 5, 6, f)), 1e-12);
}

TEST(Block, ToyLossDecreasesUnderGradientDescent) {
  Rng rng(16);
  auto b = BlockParams::init({4}, rng);
  const Tensor x = uniform_tensor({16, 4}, rng, -1, 1);
  const Tensor target = uniform_tensor({16, 4}, rng, -1, 1);
  NamedTensors named;
  b.collect("b", named);
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    for (auto& [name, t] : named) t.zero_grad();
    const Tensor d = sub(r_rwkv_block(x, 4, 4, b), target);
    const Tensor loss = mean(mul(d, d));
    losses.push_back(loss.item());
    autograd::backward(loss);
    for (auto& [name, t] : named) {
      if (!t.has_grad()) continue;
      auto v = t.mutable_data();
      const auto g = t.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.005 * g[i];
    }
  }
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << i;
  EXPECT_LT(losses.back(), 0.9 * losses.front());
}

TEST(Block, ConfigErrors) {
  Rng rng(17);
  EXPECT_THROW(BlockParams::init({6, 4, 2, AttentionKind::re_wkv, ShiftKind::quad}, rng),
               ConfigError);
  EXPECT_THROW(BlockParams::init({4, 4, 0}, rng), ConfigError);
  EXPECT_THROW(parse_attention("mamba"), ConfigError);
  EXPECT_EQ(parse_shift("quad"), ShiftKind::quad);
}

}  // namespace
}  // namespace rrwkv
