#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rrwkv/checkpoint.hpp"
#include "rrwkv/data.hpp"
#include "rrwkv/degrade.hpp"
#include "rrwkv/metrics.hpp"
#include "rrwkv/restore_net.hpp"

namespace rrwkv {

// Mean absolute error; backward is sign(pred - target) / N (0 at ties).
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// lr_final + (lr_init - lr_final) (1 + cos(pi step / total)) / 2, held at
// lr_final once step >= total.
double cosine_lr(std::size_t step, std::size_t total, double lr_init, double lr_final);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(NamedTensors params, AdamConfig config = {});

  // Applies one update from the gradients currently stored on the parameters.
  // Parameters without a gradient count as zero-gradient.
  void step(double lr);
  std::uint64_t steps() const { return steps_; }

  // "adam.m/<name>", "adam.v/<name>" and "adam.step".
  NamedTensors state() const;
  void load_state(const CheckpointData& data);

 private:
  NamedTensors params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

struct TrainConfig {
  ModelConfig model = ModelConfig::light();
  DegradationSpec degradation;
  std::size_t patch = 64;
  std::size_t batch = 2;
  std::size_t iterations = 2000;
  double lr_init = 2e-4;
  double lr_final = 1e-6;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t val_every = 100;         // 0: only after the last iteration
  std::size_t checkpoint_every = 0;    // 0: only the final checkpoint
  double grad_clip = 0;                // global L2 norm cap; 0 disables

  void validate() const;
  // `key = value` lines, '#' starts a comment. Unknown keys, malformed values
  // and repeated keys raise ConfigError naming the line.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string str() const;
};

struct LogRow {
  std::size_t iter = 0;
  double lr = 0;
  double l1 = 0;
  double val_psnr = 0;  // NaN when not computed at this iteration
  bool skipped = false;
};

// iter,lr,l1,val_psnr; val_psnr left blank when not computed.
std::string log_csv(const std::vector<LogRow>& rows);

struct TrainResult {
  std::vector<LogRow> log;
  double initial_train_l1 = 0;
  double final_train_l1 = 0;
  double lq_val_psnr = 0;     // degraded input against reference
  double final_val_psnr = 0;  // NaN without a val set
  std::size_t skipped_steps = 0;
  CheckpointData checkpoint;  // weights plus optimizer state
};

struct TrainHooks {
  std::function<void(const LogRow&)> on_log;
  std::function<void(const CheckpointData&)> on_checkpoint;
};

// Mean L1 of model(lq) against hq over whole images; no graph is recorded.
double mean_l1(const Model& model, const std::vector<ImagePair>& pairs);
// Per-image PSNR/SSIM/RMSE of model(lq) against hq.
MetricReport evaluate(const Model& model, const std::vector<ImagePair>& pairs);
// Same metrics for the unrestored inputs.
MetricReport evaluate_inputs(const std::vector<ImagePair>& pairs);

/// Runs `config.iterations` Adam steps on random patches of `train_set`.
/// Batch items are accumulated sequentially, so results depend only on the
/// seed. A step whose gradient is non-finite is skipped; two consecutive
/// non-finite losses raise NumericError.
TrainResult train(Model& model, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace rrwkv
