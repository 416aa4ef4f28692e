#pragma once

#include <cmath>
#include <random>

namespace rrwkv {

template <typename Rng>
std::uint64_t poisson_sample(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  if (mean >= 50.0) {
    std::normal_distribution<double> n(mean, std::sqrt(mean));
    const double x = std::round(n(rng));
    return x < 0 ? 0 : static_cast<std::uint64_t>(x);
  }
  // Sequential search of the CDF.
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  double p = std::exp(-mean), cdf = p;
  std::uint64_t k = 0;
  while (u > cdf && k < 1000) {
    ++k;
    p *= mean / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

}  // namespace rrwkv
