#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rrwkv {

struct TimingRow {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::string variant;  // "scan" or "oracle"
  double mean_ns = 0;
  double std_ns = 0;
};

struct BenchOptions {
  std::string op = "bi-wkv";  // bi-wkv or uni-wkv
  std::vector<std::size_t> sizes{256, 1024, 4096};
  std::size_t channels = 8;
  std::size_t repeats = 5;
  std::size_t oracle_max_tokens = 4096;  // the O(T^2) reference is skipped above this
  double min_sample_ms = 5;  // short calls are looped until a sample takes this long
  std::uint64_t seed = 42;
};

// Wall time per forward call of the linear scan and of the quadratic oracle.
std::vector<TimingRow> bench_wkv(const BenchOptions& options);

// T,C,variant,mean_ns,std_ns
std::string timing_csv(const std::vector<TimingRow>& rows);

struct FuseCheckResult {
  std::size_t trials = 0;
  std::size_t passed = 0;
  double max_abs_err = 0;
  double tolerance = 0;
};

/// Compares train-mode and fused Omni-Shift outputs on random kernels and
/// inputs; every fourth draw is a 3x3 image, where the padding dominates.
FuseCheckResult fuse_check(std::size_t trials, std::uint64_t seed, double tolerance = 1e-12);

}  // namespace rrwkv
