#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rrwkv/tensor.hpp"

namespace rrwkv {

enum class DegradationKind { kspace, gaussian, poisson };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::kspace;
  double fraction = 0.0625;     // kspace: retained share of coefficients, (0, 1]
  double sigma = 0.05;          // gaussian: noise std, >= 0
  double dose_factor = 4.0;     // poisson: dose reduction, >= 1
  double photon_scale = 1e4;    // poisson: counts at intensity 1
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError

  // "kspace:0.0625", "gaussian:0.05", "poisson:4" (photon scale keeps its default).
  static DegradationSpec parse(const std::string& text);
  std::string str() const;
};

using Complex = std::complex<double>;

// In-place 2-D DFT of a row-major H x W grid (FFTW). The inverse includes the
// 1/(H*W) normalization.
void dft2(std::vector<Complex>& data, std::size_t height, std::size_t width, bool inverse);

// Literal O((HW)^2) transform, for testing the fast path.
std::vector<Complex> dft2_direct(const std::vector<Complex>& data, std::size_t height,
                                 std::size_t width, bool inverse);

// Side of the retained centered band along an axis of length n:
// 2 * floor(sqrt(fraction) * n / 2), at least 2 and at most n.
std::size_t kspace_band(std::size_t n, double fraction);

// Low-frequency mask on the unshifted spectrum. Index i has centered frequency
// j = ((i + n/2) mod n) - n/2 in [-n/2, n/2); it is kept when -h/2 <= j < h/2.
std::vector<bool> kspace_mask(std::size_t height, std::size_t width, double fraction);

// hq: H x W x 1 with H, W even. Zero-fills outside the mask, transforms back,
// keeps the real part, clamps to [0, 1].
Tensor degrade_kspace(const Tensor& hq, double fraction);

// Gaussian or Poisson noise, clamped to [0, 1]; kspace is rejected here.
Tensor degrade_noise(const Tensor& hq, const DegradationSpec& spec);

// Dispatches on spec.kind; noise is drawn from `seed`.
Tensor degrade(const Tensor& hq, const DegradationSpec& spec, std::uint64_t seed);

// Poisson draw: inversion below mean 50, rounded normal approximation above.
template <typename Rng>
std::uint64_t poisson_sample(double mean, Rng& rng);

}  // namespace rrwkv

#include "rrwkv/detail/poisson.hpp"
