#include "rrwkv/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "rrwkv/errors.hpp"
#include "rrwkv/rng.hpp"
#include "test_util.hpp"

namespace rrwkv {
namespace {

TEST(L1Loss, ValueAndSignGradient) {
  Tensor p(Shape{4}, {1.0, -2.0, 0.5, 3.0});
  Tensor t(Shape{4}, {0.0, 0.0, 0.5, 4.0});
  p.set_requires_grad(true);
  const Tensor l = l1_loss(p, t);
  EXPECT_DOUBLE_EQ(l[0], (1 + 2 + 0 + 1) / 4.0);
  autograd::backward(l);
  const std::vector<double> want{0.25, -0.25, 0.0, -0.25};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.grad()[i], want[i]);
}

TEST(L1Loss, FiniteDifferencesAwayFromTies) {
  Rng rng(1);
  Tensor p = uniform_tensor({3, 5}, rng, -1, 1);
  Tensor t = uniform_tensor({3, 5}, rng, -1, 1);
  p.set_requires_grad(true);
  t.set_requires_grad(true);
  const auto r = testing::check_gradients([&] { return l1_loss(p, t); }, {p, t});
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(L1Loss, RejectsMismatch) {
  EXPECT_THROW(l1_loss(Tensor({2, 2}), Tensor({4})), ShapeError);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 2e-4, 1e-6), 2e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(50, 100, 2e-4, 1e-6), 1e-6 + 0.5 * (2e-4 - 1e-6));
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 2e-4, 1e-6), 1e-6);
  EXPECT_DOUBLE_EQ(cosine_lr(250, 100, 2e-4, 1e-6), 1e-6);
  const double q = cosine_lr(25, 100, 1.0, 0.0);
  EXPECT_NEAR(q, 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  for (std::size_t s = 1; s <= 100; ++s)
    EXPECT_LE(cosine_lr(s, 100, 1.0, 0.0), cosine_lr(s - 1, 100, 1.0, 0.0));
}

Tensor param(std::vector<double> v) {
  const std::size_t n = v.size();
  Tensor t(Shape{n}, std::move(v));
  t.set_requires_grad(true);
  return t;
}

TEST(Adam, TwoHandComputedSteps) {
  Tensor p = param({1.0});
  Adam adam({{"p", p}});
  p.mutable_grad()[0] = 0.5;
  adam.step(0.1);
  // m = 0.05, v = 2.5e-4, bias-corrected to 0.5 and 0.25.
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  p.mutable_grad()[0] = -1.0;
  adam.step(0.1);
  // m = -0.055, v = 1.24975e-3; corrections 0.19 and 1.999e-3.
  const double mh = -0.055 / 0.19, vh = 1.24975e-3 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 0.9000000019999999 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
  EXPECT_NEAR(p[0], 0.9366103542405653, 1e-14);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, ZeroGradientsFromFreshStateLeaveParamsUnchanged) {
  Tensor p = param({1.5, -0.25});
  Adam adam({{"p", p}});
  p.zero_grad();
  adam.step(0.1);
  EXPECT_EQ(p[0], 1.5);
  EXPECT_EQ(p[1], -0.25);
  for (const auto& [name, t] : adam.state())
    if (name != "adam.step")
      for (double x : t.data()) EXPECT_EQ(x, 0.0) << name;
}

TEST(Adam, QuadraticBowlConverges) {
  Tensor p = param({0.3, -0.7, 1.2});
  Adam adam({{"p", p}});
  for (int s = 0; s < 500; ++s) {
    p.zero_grad();
    autograd::backward(sum(mul(p, p)));
    adam.step(1e-2);
  }
  for (double x : p.data()) EXPECT_LT(std::abs(x), 1e-3);
}

TEST(Adam, StateRoundTrip) {
  Tensor p = param({1.0, 2.0});
  Adam a({{"p", p}});
  p.mutable_grad()[0] = 0.3;
  p.mutable_grad()[1] = -0.2;
  a.step(0.01);
  CheckpointData data;
  data.tensors = a.state();
  Tensor q = param({1.0, 2.0});
  Adam b({{"p", q}});
  b.load_state(data);
  EXPECT_EQ(b.steps(), 1u);
  q.mutable_grad()[0] = 0.1;
  p.mutable_grad()[0] = 0.1;
  p.mutable_grad()[1] = q.mutable_grad()[1] = 0.4;
  std::copy(p.data().begin(), p.data().end(), q.mutable_data().begin());
  a.step(0.01);
  b.step(0.01);
  EXPECT_EQ(p.data()[0], q.data()[0]);
  EXPECT_EQ(p.data()[1], q.data()[1]);
}

TEST(TrainConfig, DefaultsMatchTheDeskSetup) {
  const TrainConfig c = TrainConfig::parse("");
  EXPECT_EQ(c.patch, 64u);
  EXPECT_EQ(c.batch, 2u);
  EXPECT_EQ(c.iterations, 2000u);
  EXPECT_DOUBLE_EQ(c.lr_init, 2e-4);
  EXPECT_DOUBLE_EQ(c.lr_final, 1e-6);
  EXPECT_EQ(c.model, ModelConfig::light());
  EXPECT_EQ(c.degradation.kind, DegradationKind::kspace);
}

TEST(TrainConfig, ParsesOverridesAndComments) {
  const TrainConfig c = TrainConfig::parse(
      "# smoke run\n"
      "variant = full\n"
      "attention = uni-wkv   # ablation\n"
      "shift=uni\n"
      "\n"
      "iterations = 12\n"
      "lr_init = 1e-3\n"
      "degradation = gaussian:0.1\n"
      "seed = 42\n"
      "grad_clip = 0.5\n");
  EXPECT_EQ(c.model.variant, Variant::full);
  EXPECT_EQ(c.model.base_channels, 48u);
  EXPECT_EQ(c.model.attention, AttentionKind::uni_wkv);
  EXPECT_EQ(c.model.shift, ShiftKind::uni);
  EXPECT_EQ(c.iterations, 12u);
  EXPECT_DOUBLE_EQ(c.lr_init, 1e-3);
  EXPECT_EQ(c.degradation.kind, DegradationKind::gaussian);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_DOUBLE_EQ(c.grad_clip, 0.5);
  const TrainConfig again = TrainConfig::parse(c.str());
  EXPECT_EQ(again.str(), c.str());
}

TEST(TrainConfig, RejectsBadInput) {
  EXPECT_THROW(TrainConfig::parse("learning_rate = 1"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("batch"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("batch = two"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("batch = -1"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("batch = 0"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("seed = 1\nseed = 2"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("lr_init = nan"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("variant = huge"), ConfigError);
  try {
    TrainConfig::parse("seed = 1\n\nbogus = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

ModelConfig tiny_model() {
  ModelConfig m = ModelConfig::light();
  m.base_channels = 8;
  m.blocks = {1, 1, 1, 1};
  return m;
}

std::vector<ImagePair> tiny_set(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<ImagePair> out;
  const DegradationSpec spec = DegradationSpec::parse("kspace:0.25");
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(make_pair(synth_phantom(size, seed + i), "img" + std::to_string(i), spec, seed));
  return out;
}

TrainConfig tiny_config(std::size_t iterations) {
  TrainConfig c;
  c.model = tiny_model();
  c.patch = 16;
  c.batch = 2;
  c.iterations = iterations;
  c.lr_init = 1e-3;
  c.val_every = 2;
  c.seed = 9;
  return c;
}

TEST(Train, ZeroIterationsReturnsTheInitialWeights) {
  const auto data = tiny_set(2, 16, 1);
  TrainConfig c = tiny_config(0);
  Model m = Model::build(c.model, 3);
  const CheckpointData before = snapshot(m, 0, 3);
  const TrainResult r = train(m, data, data, c);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.checkpoint.iteration, 0u);
  for (const auto& [name, t] : before.tensors) {
    const Tensor& after = r.checkpoint.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t[i], after[i]) << name;
  }
  EXPECT_DOUBLE_EQ(r.initial_train_l1, r.final_train_l1);
}

TEST(Train, DeterministicAcrossRuns) {
  const auto data = tiny_set(3, 24, 2);
  const TrainConfig c = tiny_config(4);
  Model a = Model::build(c.model, 5), b = Model::build(c.model, 5);
  const TrainResult ra = train(a, data, data, c), rb = train(b, data, data, c);
  ASSERT_EQ(ra.log.size(), 4u);
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    EXPECT_EQ(ra.log[i].l1, rb.log[i].l1);
    EXPECT_TRUE(std::isnan(ra.log[i].val_psnr) == std::isnan(rb.log[i].val_psnr));
  }
  EXPECT_EQ(log_csv(ra.log), log_csv(rb.log));
  const Tensor ya = a.forward(data[0].lq), yb = b.forward(data[0].lq);
  for (std::size_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya[i], yb[i]);
  EXPECT_TRUE(ra.checkpoint.contains("adam.m/output.weight"));
  EXPECT_EQ(ra.checkpoint.at("adam.step")[0], 4.0);
}

TEST(Train, LogCsvLeavesMissingValidationBlank) {
  const auto data = tiny_set(2, 16, 3);
  const TrainConfig c = tiny_config(3);
  Model m = Model::build(c.model, 1);
  std::vector<LogRow> seen;
  const TrainResult r = train(m, data, data, c, {[&](const LogRow& row) { seen.push_back(row); }, {}});
  EXPECT_EQ(seen.size(), 3u);
  const std::string csv = log_csv(r.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,lr,l1,val_psnr");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.back(), ',') << line;  // iteration 1: not validated
  std::getline(in, line);
  EXPECT_NE(line.back(), ',') << line;  // iteration 2
  EXPECT_FALSE(std::isnan(r.final_val_psnr));
}

TEST(Train, CheckpointHookFiresOnSchedule) {
  const auto data = tiny_set(1, 16, 4);
  TrainConfig c = tiny_config(4);
  c.checkpoint_every = 2;
  Model m = Model::build(c.model, 1);
  std::vector<std::uint64_t> iters;
  train(m, data, {}, c, {{}, [&](const CheckpointData& d) { iters.push_back(d.iteration); }});
  EXPECT_EQ(iters, (std::vector<std::uint64_t>{2, 4}));
}

TEST(Train, NonFiniteLossTwiceAborts) {
  auto data = tiny_set(1, 16, 5);
  data[0].lq.mutable_data()[7] = std::numeric_limits<double>::quiet_NaN();
  const TrainConfig c = tiny_config(5);
  Model m = Model::build(c.model, 1);
  const CheckpointData before = snapshot(m, 0, 1);
  EXPECT_THROW(train(m, data, {}, c), NumericError);
  // The one tolerated bad iteration must not have touched the weights.
  for (const auto& [name, t] : m.parameters())
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t[i], before.at(name)[i]) << name;
}

TEST(Train, RejectsUnusableSetups) {
  const auto data = tiny_set(1, 16, 6);
  TrainConfig c = tiny_config(1);
  Model m = Model::build(c.model, 1);
  EXPECT_THROW(train(m, {}, {}, c), ConfigError);
  c.patch = 32;
  EXPECT_THROW(train(m, data, {}, c), ConfigError);
}

TEST(Train, OverfitsASinglePair) {
  const auto data = tiny_set(1, 32, 7);
  TrainConfig c;
  c.model = ModelConfig::light();
  c.patch = 32;
  c.batch = 1;
  c.iterations = 200;
  c.lr_init = 2e-3;
  c.lr_final = 1e-5;
  c.val_every = 0;
  c.seed = 1;
  Model m = Model::build(c.model, 7);
  const TrainResult r = train(m, data, {}, c);
  EXPECT_EQ(r.skipped_steps, 0u);
  EXPECT_LT(r.final_train_l1, 0.02) << "initial " << r.initial_train_l1;
}

}  // namespace
}  // namespace rrwkv
