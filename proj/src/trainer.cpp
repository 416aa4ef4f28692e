#include "rrwkv/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "rrwkv/errors.hpp"
#include "rrwkv/rng.hpp"

namespace rrwkv {

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (pred.numel() == 0) throw ShapeError("l1_loss: empty input");
  const auto p = pred.data(), t = target.data();
  const double n = static_cast<double>(pred.numel());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  Tensor y(Shape{}, {s / n});
  if (autograd::should_record({&pred, &target})) {
    y.set_requires_grad(true);
    autograd::tape().record([pi = pred.impl(), ti = target.impl(), yi = y.impl(), n] {
      if (!yi->has_grad) return;
      const double g = yi->grad[0] / n;
      for (auto* side : {&pi, &ti}) {
        if (!(*side)->requires_grad) continue;
        const double dir = side == &pi ? 1.0 : -1.0;
        auto& gx = (*side)->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double d = pi->data[i] - ti->data[i];
          gx[i] += dir * g * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0);
        }
      }
    });
  }
  return y;
}

double cosine_lr(std::size_t step, std::size_t total, double lr_init, double lr_final) {
  if (total == 0 || step >= total) return lr_final;
  const double c = std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total));
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + c);
}

Adam::Adam(NamedTensors params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>{};
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = b1 * m[j] + (1 - b1) * gj;
      v[j] = b2 * v[j] + (1 - b2) * gj * gj;
      x[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Shape& s = params_[i].second.shape();
    out.emplace_back("adam.m/" + params_[i].first, Tensor(s, m_[i]));
    out.emplace_back("adam.v/" + params_[i].first, Tensor(s, v_[i]));
  }
  out.emplace_back("adam.step", Tensor(Shape{1}, {static_cast<double>(steps_)}));
  return out;
}

void Adam::load_state(const CheckpointData& data) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& name = params_[i].first;
    const Tensor& m = data.at("adam.m/" + name);
    const Tensor& v = data.at("adam.v/" + name);
    if (m.numel() != m_[i].size() || v.numel() != v_[i].size())
      throw FormatError("optimizer state for '" + name + "' has the wrong size");
    m_[i].assign(m.data().begin(), m.data().end());
    v_[i].assign(v.data().begin(), v.data().end());
  }
  steps_ = static_cast<std::uint64_t>(data.at("adam.step")[0]);
}

// --- configuration -----------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_size(const std::string& v, const std::string& where) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v, const std::string& where) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(x))
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  return x;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  degradation.validate();
  if (patch == 0) throw ConfigError("patch must be at least 1");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr_init > 0) || !(lr_final >= 0)) throw ConfigError("learning rates must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam.eps > 0)) throw ConfigError("adam eps must be positive");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be non-negative");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::string variant = "light";
  std::map<std::string, std::pair<std::string, std::string>> kv;  // key -> (value, where)
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(n);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected key = value");
    if (kv.count(key)) throw ConfigError(where + ": '" + key + "' given twice");
    kv[key] = {value, where + " (" + key + ")"};
  }
  // The variant picks the architecture defaults the other model keys override.
  if (auto it = kv.find("variant"); it != kv.end()) {
    c.model = parse_variant(it->second.first) == Variant::full ? ModelConfig::full()
                                                              : ModelConfig::light();
    kv.erase(it);
  }
  for (const auto& [key, entry] : kv) {
    const auto& [v, where] = entry;
    if (key == "attention") c.model.attention = parse_attention(v);
    else if (key == "shift") c.model.shift = parse_shift(v);
    else if (key == "base_channels") c.model.base_channels = to_size(v, where);
    else if (key == "recurrences") c.model.recurrences = to_size(v, where);
    else if (key == "hidden_ratio") c.model.hidden_ratio = to_size(v, where);
    else if (key == "resample_kernel") c.model.resample_kernel = to_size(v, where);
    else if (key == "refinement") c.model.refinement = to_size(v, where);
    else if (key == "degradation") c.degradation = DegradationSpec::parse(v);
    else if (key == "patch") c.patch = to_size(v, where);
    else if (key == "batch") c.batch = to_size(v, where);
    else if (key == "iterations") c.iterations = to_size(v, where);
    else if (key == "lr_init") c.lr_init = to_double(v, where);
    else if (key == "lr_final") c.lr_final = to_double(v, where);
    else if (key == "beta1") c.adam.beta1 = to_double(v, where);
    else if (key == "beta2") c.adam.beta2 = to_double(v, where);
    else if (key == "eps") c.adam.eps = to_double(v, where);
    else if (key == "seed") c.seed = to_size(v, where);
    else if (key == "val_every") c.val_every = to_size(v, where);
    else if (key == "checkpoint_every") c.checkpoint_every = to_size(v, where);
    else if (key == "grad_clip") c.grad_clip = to_double(v, where);
    else throw ConfigError(where.substr(0, where.find(" (")) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::str() const {
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << to_string(model.variant) << '\n'
     << "attention = " << to_string(model.attention) << '\n'
     << "shift = " << to_string(model.shift) << '\n'
     << "base_channels = " << model.base_channels << '\n'
     << "recurrences = " << model.recurrences << '\n'
     << "hidden_ratio = " << model.hidden_ratio << '\n'
     << "resample_kernel = " << model.resample_kernel << '\n'
     << "refinement = " << model.refinement << '\n'
     << "degradation = " << degradation.str() << '\n'
     << "patch = " << patch << '\n'
     << "batch = " << batch << '\n'
     << "iterations = " << iterations << '\n'
     << "lr_init = " << lr_init << '\n'
     << "lr_final = " << lr_final << '\n'
     << "beta1 = " << adam.beta1 << '\n'
     << "beta2 = " << adam.beta2 << '\n'
     << "eps = " << adam.eps << '\n'
     << "seed = " << seed << '\n'
     << "val_every = " << val_every << '\n'
     << "checkpoint_every = " << checkpoint_every << '\n'
     << "grad_clip = " << grad_clip << '\n';
  return os.str();
}

std::string log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "iter,lr,l1,val_psnr\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << r.lr << ',' << r.l1 << ',';
    if (!std::isnan(r.val_psnr)) os << r.val_psnr;
    os << '\n';
  }
  return os.str();
}

// --- loop --------------------------------------------------------------------

double mean_l1(const Model& model, const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  autograd::NoGradGuard guard;
  double s = 0;
  for (const auto& p : pairs) s += l1_loss(model.forward(p.lq), p.hq)[0];
  return s / static_cast<double>(pairs.size());
}

MetricReport evaluate(const Model& model, const std::vector<ImagePair>& pairs) {
  autograd::NoGradGuard guard;
  MetricReport r;
  for (const auto& p : pairs) r.add(p.id, model.forward(p.lq), p.hq);
  return r;
}

MetricReport evaluate_inputs(const std::vector<ImagePair>& pairs) {
  MetricReport r;
  for (const auto& p : pairs) r.add(p.id, p.lq, p.hq);
  return r;
}

namespace {

double val_psnr(const Model& model, const std::vector<ImagePair>& val) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate(model, val).psnr().mean;
}

bool grads_finite(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad())
      if (!std::isfinite(g)) return false;
  }
  return true;
}

void clip_gradients(NamedTensors& params, double max_norm) {
  double sq = 0;
  for (const auto& [name, t] : params)
    if (t.has_grad())
      for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double f = max_norm / norm;
  for (auto& [name, t] : params)
    if (t.has_grad())
      for (double& g : t.mutable_grad()) g *= f;
}

CheckpointData checkpoint_of(const Model& model, const Adam& adam, std::size_t iter,
                             std::uint64_t seed) {
  CheckpointData c = snapshot(model, iter, seed);
  for (auto& t : adam.state()) c.tensors.push_back(std::move(t));
  return c;
}

}  // namespace

TrainResult train(Model& model, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  for (const auto& p : train_set)
    if (p.hq.dim(0) < config.patch || p.hq.dim(1) < config.patch)
      throw ConfigError("train: image '" + p.id + "' is smaller than patch " + std::to_string(config.patch));

  NamedTensors params = model.parameters();
  Adam adam(params, config.adam);
  TrainResult result;
  result.initial_train_l1 = mean_l1(model, train_set);
  result.lq_val_psnr = val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : evaluate_inputs(val_set).psnr().mean;
  std::size_t bad_losses = 0;
  const double inv_batch = 1.0 / static_cast<double>(config.batch);

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    LogRow row;
    row.iter = it;
    row.lr = cosine_lr(it - 1, config.iterations, config.lr_init, config.lr_final);
    row.val_psnr = std::numeric_limits<double>::quiet_NaN();
    for (auto& [name, t] : params) t.zero_grad();

    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(it)));
    double loss_sum = 0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const auto& pair = train_set[rng() % train_set.size()];
      const ImagePair patch = sample_patches(pair, config.patch, 1, rng())[0];
      autograd::tape().clear();
      const Tensor loss = l1_loss(model.forward(patch.lq), patch.hq);
      loss_sum += loss[0];
      if (!std::isfinite(loss[0])) {
        autograd::tape().clear();
        continue;
      }
      autograd::backward(scale(loss, inv_batch));
    }
    row.l1 = loss_sum * inv_batch;

    if (!std::isfinite(row.l1)) {
      if (++bad_losses >= 2) {
        std::ostringstream os;
        os << "train: non-finite loss at iterations " << it - 1 << " and " << it
           << " (lr " << row.lr << ")";
        throw NumericError(os.str());
      }
      row.skipped = true;
    } else {
      bad_losses = 0;
      row.skipped = !grads_finite(params);
    }
    if (row.skipped) {
      ++result.skipped_steps;
    } else {
      if (config.grad_clip > 0) clip_gradients(params, config.grad_clip);
      adam.step(row.lr);
    }

    const bool last = it == config.iterations;
    if (!val_set.empty() && (last || (config.val_every && it % config.val_every == 0)))
      row.val_psnr = val_psnr(model, val_set);
    result.log.push_back(row);
    if (hooks.on_log) hooks.on_log(row);
    if (hooks.on_checkpoint && !last && config.checkpoint_every && it % config.checkpoint_every == 0)
      hooks.on_checkpoint(checkpoint_of(model, adam, it, config.seed));
  }
  for (auto& [name, t] : params) t.zero_grad();
  result.final_train_l1 = mean_l1(model, train_set);
  result.final_val_psnr = val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : (result.log.empty() ? val_psnr(model, val_set)
                                                                : result.log.back().val_psnr);
  result.checkpoint = checkpoint_of(model, adam, config.iterations, config.seed);
  if (hooks.on_checkpoint) hooks.on_checkpoint(result.checkpoint);
  return result;
}

}  // namespace rrwkv
