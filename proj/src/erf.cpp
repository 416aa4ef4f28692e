#include "rrwkv/erf.hpp"

#include <cmath>
#include <sstream>

#include "rrwkv/errors.hpp"
#include "rrwkv/rng.hpp"

namespace rrwkv {

double ErfMap::coverage(double threshold) const {
  std::size_t hit = 0;
  for (double v : map.data()) hit += v > threshold;
  return static_cast<double>(hit) / static_cast<double>(map.numel());
}

ErfMap erf(const ImageFn& f, const std::vector<Tensor>& inputs, std::size_t center_h,
           std::size_t center_w, std::string label) {
  if (inputs.empty()) throw ConfigError("erf: needs at least one input");
  const Shape shape = inputs[0].shape();
  if (shape.size() != 3 || shape[2] != 1) throw ShapeError("erf: inputs must be H x W x 1");
  if (center_h >= shape[0] || center_w >= shape[1]) throw ConfigError("erf: center out of bounds");
  std::vector<double> acc(shape_numel(shape), 0.0);
  autograd::tape().clear();
  for (const Tensor& in : inputs) {
    if (in.shape() != shape) throw ShapeError("erf: inputs differ in shape");
    Tensor x = in.detach();
    x.set_requires_grad(true);
    const Tensor y = f(x);
    if (y.rank() != 3 || y.dim(0) != shape[0] || y.dim(1) != shape[1])
      throw ShapeError("erf: model output " + shape_str(y.shape()) + " does not match input");
    if (!y.requires_grad()) throw StateError("erf: model output carries no gradient");
    const Tensor out = select(y, (center_h * shape[1] + center_w) * y.dim(2));
    autograd::backward(out);
    if (x.has_grad()) {
      const auto g = x.grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::abs(g[i]);
    }
  }
  double peak = 0;
  for (double& v : acc) {
    v /= static_cast<double>(inputs.size());
    peak = std::max(peak, v);
  }
  if (peak > 0)
    for (double& v : acc) v /= peak;
  return {std::move(label), inputs.size(), Tensor(shape, std::move(acc))};
}

std::vector<Tensor> erf_inputs(std::size_t height, std::size_t width, std::size_t count,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(uniform_tensor({height, width, 1}, rng, 0, 1));
  return out;
}

std::string ProbeConfig::label() const { return to_string(attention) + "+" + to_string(shift); }

ProbeConfig ProbeConfig::parse(const std::string& label) {
  const auto plus = label.find('+');
  if (plus == std::string::npos)
    throw ConfigError("variant '" + label + "' must look like <attention>+<shift>, e.g. re-wkv+omni");
  ProbeConfig c;
  c.attention = parse_attention(label.substr(0, plus));
  c.shift = parse_shift(label.substr(plus + 1));
  return c;
}

ProbeModel ProbeModel::build(const ProbeConfig& config) {
  Rng rng(config.seed);
  ProbeModel m;
  m.config_ = config;
  const std::size_t C = config.channels;
  m.lift_ = Conv::init(1, 1, C, true, rng);
  const BlockConfig bc{C, 4, config.recurrences, config.attention, config.shift};
  for (std::size_t i = 0; i < config.blocks; ++i) {
    BlockParams b = BlockParams::init(bc, rng);
    if (config.live_outputs) {
      const double s = 1.0 / std::sqrt(static_cast<double>(C));
      b.spatial.w_o = normal_tensor({C, C}, rng, s);
      b.channel.w_o = normal_tensor({C, C}, rng, s);
      b.spatial.w_o.set_requires_grad(true);
      b.channel.w_o.set_requires_grad(true);
    }
    m.blocks_.push_back(std::move(b));
  }
  m.project_ = Conv::init(1, C, 1, true, rng);
  return m;
}

Tensor ProbeModel::forward(const Tensor& image) const {
  const std::size_t H = image.dim(0), W = image.dim(1), C = config_.channels;
  Tensor t = reshape(lift_.apply(image), {H * W, C});
  for (const auto& b : blocks_) t = r_rwkv_block(t, H, W, b);
  return add(image, project_.apply(reshape(t, {H, W, C})));
}

std::vector<ProbeConfig> all_probe_configs(std::uint64_t seed) {
  std::vector<ProbeConfig> out;
  for (auto a : {AttentionKind::uni_wkv, AttentionKind::bi_wkv, AttentionKind::re_wkv})
    for (auto s : {ShiftKind::uni, ShiftKind::quad, ShiftKind::omni}) {
      ProbeConfig c;
      c.attention = a;
      c.shift = s;
      c.seed = seed;
      out.push_back(c);
    }
  return out;
}

std::vector<ErfMap> erf_compare(const std::vector<ProbeConfig>& configs, std::size_t height,
                                std::size_t width, std::size_t samples, std::uint64_t seed) {
  const auto inputs = erf_inputs(height, width, samples, seed);
  std::vector<ErfMap> out;
  for (const auto& c : configs) {
    const ProbeModel m = ProbeModel::build(c);
    out.push_back(erf([&](const Tensor& x) { return m.forward(x); }, inputs, height / 2,
                      width / 2, c.label()));
  }
  return out;
}

std::string erf_csv(const std::vector<ErfMap>& maps, double threshold) {
  std::ostringstream os;
  os.precision(10);
  os << "label,samples,coverage\n";
  for (const auto& m : maps) os << m.label << ',' << m.samples << ',' << m.coverage(threshold) << '\n';
  return os.str();
}

}  // namespace rrwkv
