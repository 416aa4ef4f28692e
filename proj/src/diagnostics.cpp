#include "rrwkv/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "rrwkv/errors.hpp"
#include "rrwkv/kernels/wkv.hpp"
#include "rrwkv/omni_shift.hpp"
#include "rrwkv/rng.hpp"

namespace rrwkv {

namespace {

struct Sample {
  double mean = 0, std = 0;
};

Sample time_call(const std::function<void()>& f, std::size_t repeats, double min_sample_ms) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  f();  // warm-up, also sizes the inner loop
  const double once = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  const std::size_t inner = once >= min_sample_ms ? 1 : static_cast<std::size_t>(std::ceil(min_sample_ms / std::max(once, 1e-6)));
  std::vector<double> ns;
  // A call long enough to be a sample on its own is kept rather than repeated.
  if (inner == 1) ns.push_back(once * 1e6);
  while (ns.size() < repeats) {
    const auto s = clock::now();
    for (std::size_t i = 0; i < inner; ++i) f();
    ns.push_back(std::chrono::duration<double, std::nano>(clock::now() - s).count() / inner);
  }
  Sample out;
  for (double x : ns) out.mean += x;
  out.mean /= ns.size();
  for (double x : ns) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / ns.size());
  return out;
}

}  // namespace

std::vector<TimingRow> bench_wkv(const BenchOptions& o) {
  kernels::WkvMode mode;
  if (o.op == "bi-wkv") mode = kernels::WkvMode::bidirectional;
  else if (o.op == "uni-wkv") mode = kernels::WkvMode::causal;
  else throw ConfigError("bench: unknown op '" + o.op + "' (expected bi-wkv or uni-wkv)");
  if (o.sizes.empty() || o.channels == 0 || o.repeats == 0)
    throw ConfigError("bench: sizes, channels and repeats must be non-empty/positive");
  std::vector<TimingRow> rows;
  for (std::size_t T : o.sizes) {
    if (T == 0) throw ConfigError("bench: sizes must be positive");
    Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(T)));
    const kernels::WkvShape s{T, o.channels};
    const Tensor k = uniform_tensor({T, o.channels}, rng, -3, 3);
    const Tensor v = uniform_tensor({T, o.channels}, rng, -1, 1);
    const Tensor w = uniform_tensor({o.channels}, rng, 0.5, 3);
    const Tensor u = uniform_tensor({o.channels}, rng, -0.5, 0.5);
    std::vector<double> y(T * o.channels), L(T * o.channels);
    const Sample scan = time_call(
        [&] { kernels::wkv_forward(k.data(), v.data(), w.data(), u.data(), s, mode, y, L); },
        o.repeats, o.min_sample_ms);
    rows.push_back({T, o.channels, "scan", scan.mean, scan.std});
    if (T <= o.oracle_max_tokens) {
      const Sample ref = time_call(
          [&] { kernels::wkv_oracle(k.data(), v.data(), w.data(), u.data(), s, mode, y); },
          o.repeats, o.min_sample_ms);
      rows.push_back({T, o.channels, "oracle", ref.mean, ref.std});
    }
  }
  return rows;
}

std::string timing_csv(const std::vector<TimingRow>& rows) {
  std::ostringstream os;
  os.precision(12);
  os << "T,C,variant,mean_ns,std_ns\n";
  for (const auto& r : rows)
    os << r.tokens << ',' << r.channels << ',' << r.variant << ',' << r.mean_ns << ',' << r.std_ns << '\n';
  return os.str();
}

FuseCheckResult fuse_check(std::size_t trials, std::uint64_t seed, double tolerance) {
  if (trials == 0) throw ConfigError("fuse-check: trials must be positive");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 12), ch(1, 4);
  FuseCheckResult r{trials, 0, 0, tolerance};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t C = ch(rng);
    const Shape s = t % 4 == 0 ? Shape{3, 3, C} : Shape{dim(rng), dim(rng), C};
    OmniShiftParams p;
    p.k5 = uniform_tensor({5, 5, C}, rng, -1, 1);
    p.k3 = uniform_tensor({3, 3, C}, rng, -1, 1);
    p.k1 = uniform_tensor({1, 1, C}, rng, -1, 1);
    p.alpha = uniform_tensor({4}, rng, -2, 2);
    const Tensor x = uniform_tensor(s, rng, -1, 1);
    const Tensor a = omni_shift(x, p), b = omni_shift(x, fuse(p));
    double err = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    r.max_abs_err = std::max(r.max_abs_err, err);
    r.passed += err <= tolerance;
  }
  return r;
}

}  // namespace rrwkv
