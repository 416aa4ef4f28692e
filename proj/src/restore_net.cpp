#include "rrwkv/restore_net.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "rrwkv/errors.hpp"
#include "rrwkv/ops.hpp"

namespace rrwkv {

namespace {

using nlohmann::json;

Tensor tokens_of(const Tensor& image) {
  return reshape(image, {image.dim(0) * image.dim(1), image.dim(2)});
}

std::size_t level_params(const std::vector<BlockParams>& blocks) {
  NamedTensors named;
  for (const auto& b : blocks) b.collect("", named);
  std::size_t n = 0;
  for (auto& [name, t] : named) n += t.numel();
  return n;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::light ? "light" : "full"; }

Variant parse_variant(const std::string& name) {
  if (name == "light") return Variant::light;
  if (name == "full") return Variant::full;
  throw ConfigError("unknown variant '" + name + "' (expected light or full)");
}

ModelConfig ModelConfig::light() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.variant = Variant::full;
  c.base_channels = 48;
  c.blocks = {4, 6, 6, 8};
  c.refinement = 4;
  return c;
}

void ModelConfig::validate() const {
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  if (base_channels % 4 != 0)
    throw ConfigError("base_channels must be divisible by 4 (pixel shuffle at the bottleneck)");
  if (resample_kernel != 1 && resample_kernel != 3)
    throw ConfigError("resample_kernel must be 1 or 3");
  if (hidden_ratio == 0) throw ConfigError("hidden_ratio must be at least 1");
  if (attention == AttentionKind::re_wkv && recurrences == 0)
    throw ConfigError("re-wkv needs at least one recurrence");
}

std::string ModelConfig::to_json() const {
  json j{{"variant", to_string(variant)},
         {"base_channels", base_channels},
         {"blocks", blocks},
         {"refinement", refinement},
         {"recurrences", recurrences},
         {"hidden_ratio", hidden_ratio},
         {"resample_kernel", resample_kernel},
         {"attention", rrwkv::to_string(attention)},
         {"shift", rrwkv::to_string(shift)},
         {"pad_to_multiple", pad_to_multiple}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::array<std::size_t, 4>>();
    c.refinement = j.at("refinement").get<std::size_t>();
    c.recurrences = j.at("recurrences").get<std::size_t>();
    c.hidden_ratio = j.at("hidden_ratio").get<std::size_t>();
    c.resample_kernel = j.at("resample_kernel").get<std::size_t>();
    c.attention = parse_attention(j.at("attention").get<std::string>());
    c.shift = parse_shift(j.at("shift").get<std::string>());
    c.pad_to_multiple = j.at("pad_to_multiple").get<bool>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_json() == b.to_json(); }

Conv Conv::init(std::size_t k, std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * in));
  Conv c;
  c.weight = uniform_tensor({k, k, in, out}, rng, -bound, bound);
  c.weight.set_requires_grad(true);
  if (with_bias) {
    c.bias = uniform_tensor({out}, rng, -bound, bound);
    c.bias.set_requires_grad(true);
  }
  return c;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config_ = config;
  const std::size_t C = config.base_channels, rk = config.resample_kernel;

  auto make_level = [&](std::size_t channels, std::size_t count) {
    Level level;
    level.channels = channels;
    BlockConfig bc{channels, config.hidden_ratio, config.recurrences, config.attention,
                   config.shift};
    for (std::size_t i = 0; i < count; ++i) level.blocks.push_back(BlockParams::init(bc, rng));
    return level;
  };

  m.input_ = Conv::init(3, 1, C, true, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t c = C << i;
    m.encoder_[i] = make_level(c, config.blocks[i]);
    m.down_[i] = Conv::init(rk, c, c / 2, false, rng);
  }
  m.bottleneck_ = make_level(8 * C, config.blocks[3]);
  // up_[i] brings level i+2 (channels C << (i+1)) back to level i+1.
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t c = C << (i + 1);
    m.up_[i] = rk == 3 ? Conv::init(3, c, 2 * c, false, rng)
                       : Conv::init(1, c / 4, c / 2, false, rng);
  }
  m.reduce_[0] = Conv::init(1, 8 * C, 4 * C, false, rng);
  m.reduce_[1] = Conv::init(1, 4 * C, 2 * C, false, rng);
  m.decoder_[2] = make_level(4 * C, config.blocks[2]);
  m.decoder_[1] = make_level(2 * C, config.blocks[1]);
  m.decoder_[0] = make_level(2 * C, config.blocks[0]);
  m.refinement_ = make_level(2 * C, config.refinement);
  m.output_ = Conv::init(3, 2 * C, 1, true, rng);
  // Start near the identity so the initial loss is the degradation error;
  // a small nonzero scale keeps gradients flowing to every layer.
  for (auto& v : m.output_.weight.mutable_data()) v *= 1e-2;
  for (auto& v : m.output_.bias.mutable_data()) v = 0.0;
  return m;
}

Tensor Model::run_level(const Tensor& x, const Level& level) const {
  if (level.blocks.empty()) return x;
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor t = tokens_of(x);
  for (const auto& b : level.blocks) t = r_rwkv_block(t, H, W, b);
  return reshape(t, {H, W, C});
}

Tensor Model::downsample(const Tensor& x, const Conv& conv) const {
  return pixel_unshuffle(conv.apply(x));
}

Tensor Model::upsample(const Tensor& x, const Conv& conv) const {
  if (config_.resample_kernel == 3) return pixel_shuffle(conv.apply(x));
  return conv.apply(pixel_shuffle(x));
}

Tensor Model::forward_padded(const Tensor& x) const {
  const Tensor e1 = run_level(input_.apply(x), encoder_[0]);
  const Tensor e2 = run_level(downsample(e1, down_[0]), encoder_[1]);
  const Tensor e3 = run_level(downsample(e2, down_[1]), encoder_[2]);
  const Tensor b = run_level(downsample(e3, down_[2]), bottleneck_);

  Tensor d = upsample(b, up_[2]);
  d = run_level(reduce_[0].apply(concat_channels(d, e3)), decoder_[2]);
  d = upsample(d, up_[1]);
  d = run_level(reduce_[1].apply(concat_channels(d, e2)), decoder_[1]);
  d = upsample(d, up_[0]);
  d = run_level(concat_channels(d, e1), decoder_[0]);
  d = run_level(d, refinement_);
  return add(x, output_.apply(d));
}

Tensor Model::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 1 || image.dim(0) == 0 || image.dim(1) == 0)
    throw ShapeError("model input must be a non-empty H x W x 1 image, got " +
                     shape_str(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1);
  const std::size_t ph = (8 - H % 8) % 8, pw = (8 - W % 8) % 8;
  if (ph == 0 && pw == 0) return forward_padded(image);
  if (!config_.pad_to_multiple)
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not divisible by 8 and padding is disabled");
  if (ph >= H || pw >= W)
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) +
                     " is too small to reflect-pad to a multiple of 8");
  return crop(forward_padded(reflect_pad(image, ph, pw)), H, W);
}

NamedTensors Model::parameters() const {
  NamedTensors out;
  auto conv = [&](const std::string& name, const Conv& c) {
    out.emplace_back(name + ".weight", c.weight);
    if (c.bias.defined()) out.emplace_back(name + ".bias", c.bias);
  };
  auto level = [&](const std::string& name, const Level& l) {
    for (std::size_t i = 0; i < l.blocks.size(); ++i)
      l.blocks[i].collect(name + "." + std::to_string(i), out);
  };
  conv("input", input_);
  for (std::size_t i = 0; i < 3; ++i) {
    level("encoder" + std::to_string(i + 1), encoder_[i]);
    conv("down" + std::to_string(i + 1), down_[i]);
  }
  level("bottleneck", bottleneck_);
  for (std::size_t i = 3; i-- > 0;) {
    conv("up" + std::to_string(i + 1), up_[i]);
    if (i > 0) conv("reduce" + std::to_string(i + 1), reduce_[2 - i]);
    level("decoder" + std::to_string(i + 1), decoder_[i]);
  }
  level("refinement", refinement_);
  conv("output", output_);
  return out;
}

std::size_t Model::count_params() const {
  std::size_t n = 0;
  for (auto& [name, t] : parameters()) n += t.numel();
  return n;
}

std::vector<ModuleCount> Model::param_breakdown() const {
  std::vector<ModuleCount> out;
  out.push_back({"input_proj", input_.numel()});
  for (std::size_t i = 0; i < 3; ++i)
    out.push_back({"encoder" + std::to_string(i + 1), level_params(encoder_[i].blocks)});
  out.push_back({"bottleneck", level_params(bottleneck_.blocks)});
  for (std::size_t i = 3; i-- > 0;)
    out.push_back({"decoder" + std::to_string(i + 1), level_params(decoder_[i].blocks)});
  out.push_back({"refinement", level_params(refinement_.blocks)});
  std::size_t resample = 0;
  for (const auto& c : down_) resample += c.numel();
  for (const auto& c : up_) resample += c.numel();
  out.push_back({"resample", resample});
  out.push_back({"skip_reduce", reduce_[0].numel() + reduce_[1].numel()});
  out.push_back({"output_proj", output_.numel()});
  return out;
}

std::uint64_t Model::estimate_flops(std::size_t height, std::size_t width) const {
  const std::uint64_t Ch = config_.hidden_ratio;
  const std::uint64_t M = config_.attention == AttentionKind::re_wkv ? config_.recurrences : 1;
  auto conv = [](std::uint64_t pixels, const Conv& c) {
    return pixels * c.weight.numel();
  };
  auto shift_cost = [&](std::uint64_t T, std::uint64_t c) -> std::uint64_t {
    if (config_.shift != ShiftKind::omni) return 2 * T * c;
    return fused_ ? 25 * T * c : (25 + 9 + 1 + 1) * T * c;
  };
  auto block_cost = [&](std::uint64_t T, std::uint64_t c) {
    const std::uint64_t spatial = 4 * T * c * c + M * 7 * T * c + shift_cost(T, c);
    const std::uint64_t channel = (2 + 2 * Ch) * T * c * c + shift_cost(T, c);
    return spatial + channel;
  };
  auto level = [&](std::uint64_t T, const Level& l) {
    return static_cast<std::uint64_t>(l.blocks.size()) * block_cost(T, l.channels);
  };
  const std::uint64_t T1 = static_cast<std::uint64_t>(height) * width;
  const std::uint64_t T[4] = {T1, T1 / 4, T1 / 16, T1 / 64};
  std::uint64_t f = conv(T1, input_) + conv(T1, output_);
  for (std::size_t i = 0; i < 3; ++i) {
    f += level(T[i], encoder_[i]) + level(T[i], decoder_[i]);
    f += conv(T[i], down_[i]);
    // Up-convs run at the coarse level for k = 3, at the fine level for k = 1.
    f += conv(config_.resample_kernel == 3 ? T[i + 1] : T[i], up_[i]);
  }
  f += level(T[3], bottleneck_) + level(T1, refinement_);
  f += conv(T[2], reduce_[0]) + conv(T[1], reduce_[1]);
  return f;
}

void Model::fuse() {
  for (auto* l : {&encoder_[0], &encoder_[1], &encoder_[2], &bottleneck_, &decoder_[0],
                  &decoder_[1], &decoder_[2], &refinement_})
    for (auto& b : l->blocks) b.fuse();
  fused_ = true;
}

void Model::zero_output() {
  for (auto& v : output_.weight.mutable_data()) v = 0.0;
  if (output_.bias.defined())
    for (auto& v : output_.bias.mutable_data()) v = 0.0;
}

}  // namespace rrwkv
