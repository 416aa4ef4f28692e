#include "rrwkv/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "rrwkv/errors.hpp"
#include "rrwkv/rng.hpp"

namespace rrwkv {

namespace {

void check_image(const Tensor& x, const char* op) {
  if (x.rank() != 3 || x.dim(2) != 1 || x.dim(0) == 0 || x.dim(1) == 0)
    throw ShapeError(std::string(op) + ": expected an H x W x 1 image, got " +
                     shape_str(x.shape()));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void DegradationSpec::validate() const {
  switch (kind) {
    case DegradationKind::kspace:
      if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("k-space fraction must lie in (0, 1], got " + std::to_string(fraction));
      break;
    case DegradationKind::gaussian:
      if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
      break;
    case DegradationKind::poisson:
      if (!(dose_factor >= 1.0)) throw ConfigError("dose factor must be >= 1");
      if (!(photon_scale > 0.0)) throw ConfigError("photon scale must be > 0");
      break;
  }
}

DegradationSpec DegradationSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  DegradationSpec s;
  double value = 0;
  if (colon != std::string::npos) {
    std::istringstream is(text.substr(colon + 1));
    if (!(is >> value) || !is.eof())
      throw ConfigError("bad degradation parameter in '" + text + "'");
  }
  const bool has_value = colon != std::string::npos;
  if (kind == "kspace") {
    s.kind = DegradationKind::kspace;
    if (has_value) s.fraction = value;
  } else if (kind == "gaussian") {
    s.kind = DegradationKind::gaussian;
    if (has_value) s.sigma = value;
  } else if (kind == "poisson") {
    s.kind = DegradationKind::poisson;
    if (has_value) s.dose_factor = value;
  } else {
    throw ConfigError("unknown degradation '" + kind + "' (expected kspace, gaussian, poisson)");
  }
  s.validate();
  return s;
}

std::string DegradationSpec::str() const {
  std::ostringstream os;
  os.precision(17);
  switch (kind) {
    case DegradationKind::kspace: os << "kspace:" << fraction; break;
    case DegradationKind::gaussian: os << "gaussian:" << sigma; break;
    case DegradationKind::poisson: os << "poisson:" << dose_factor; break;
  }
  return os.str();
}

void dft2(std::vector<Complex>& data, std::size_t height, std::size_t width, bool inverse) {
  if (data.size() != height * width) throw ShapeError("dft2: buffer does not match H x W");
  if (data.empty()) return;
  // Planning is not thread-safe in FFTW; execution of distinct plans is.
  static std::mutex planner;
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner);
    plan = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width), buf, buf,
                            inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  if (!plan) throw NumericError("dft2: FFTW could not plan a " + std::to_string(height) + "x" +
                                std::to_string(width) + " transform");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner);
    fftw_destroy_plan(plan);
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(height * width);
    for (auto& z : data) z *= s;
  }
}

std::vector<Complex> dft2_direct(const std::vector<Complex>& data, std::size_t height,
                                 std::size_t width, bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> out(height * width);
  for (std::size_t u = 0; u < height; ++u)
    for (std::size_t v = 0; v < width; ++v) {
      std::complex<long double> acc = 0;
      for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w) {
          const long double phase =
              sign * 2.0L * std::numbers::pi_v<long double> *
              (static_cast<long double>((u * h) % height) / height +
               static_cast<long double>((v * w) % width) / width);
          acc += std::complex<long double>(data[h * width + w]) *
                 std::polar(1.0L, phase);
        }
      if (inverse) acc /= static_cast<long double>(height * width);
      out[u * width + v] = Complex(static_cast<double>(acc.real()), static_cast<double>(acc.imag()));
    }
  return out;
}

std::size_t kspace_band(std::size_t n, double fraction) {
  const auto half = static_cast<std::size_t>(std::floor(std::sqrt(fraction) * n / 2.0 + 1e-9));
  return std::clamp<std::size_t>(2 * half, 2, n);
}

std::vector<bool> kspace_mask(std::size_t height, std::size_t width, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("k-space fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (height % 2 || width % 2) throw ShapeError("k-space truncation needs even image sides");
  auto keep_axis = [fraction](std::size_t n) {
    const long h = static_cast<long>(kspace_band(n, fraction));
    const long N = static_cast<long>(n);
    std::vector<bool> keep(n);
    for (long i = 0; i < N; ++i) {
      const long j = ((i + N / 2) % N) - N / 2;
      keep[static_cast<std::size_t>(i)] = -h / 2 <= j && j < h / 2;
    }
    return keep;
  };
  const auto kh = keep_axis(height), kw = keep_axis(width);
  std::vector<bool> mask(height * width);
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) mask[h * width + w] = kh[h] && kw[w];
  return mask;
}

Tensor degrade_kspace(const Tensor& hq, double fraction) {
  check_image(hq, "degrade_kspace");
  const std::size_t H = hq.dim(0), W = hq.dim(1);
  const auto mask = kspace_mask(H, W, fraction);
  std::vector<Complex> spec(H * W);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = hq[i];
  dft2(spec, H, W, false);
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (!mask[i]) spec[i] = 0;
  dft2(spec, H, W, true);
  std::vector<double> out(H * W);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(spec[i].real());
  return Tensor(hq.shape(), std::move(out));
}

Tensor degrade_noise(const Tensor& hq, const DegradationSpec& spec) {
  check_image(hq, "degrade_noise");
  spec.validate();
  Rng rng(spec.seed);
  std::vector<double> out(hq.numel());
  const auto x = hq.data();
  switch (spec.kind) {
    case DegradationKind::gaussian: {
      if (spec.sigma == 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(x[i]);
        break;
      }
      std::normal_distribution<double> n(0.0, spec.sigma);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(x[i] + n(rng));
      break;
    }
    case DegradationKind::poisson: {
      const double gain = spec.photon_scale / spec.dose_factor;
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = clamp01(static_cast<double>(poisson_sample(std::max(x[i], 0.0) * gain, rng)) /
                         gain);
      break;
    }
    case DegradationKind::kspace:
      throw ConfigError("degrade_noise: k-space truncation is not a noise model");
  }
  return Tensor(hq.shape(), std::move(out));
}

Tensor degrade(const Tensor& hq, const DegradationSpec& spec, std::uint64_t seed) {
  if (spec.kind == DegradationKind::kspace) {
    spec.validate();
    return degrade_kspace(hq, spec.fraction);
  }
  DegradationSpec s = spec;
  s.seed = seed;
  return degrade_noise(hq, s);
}

}  // namespace rrwkv
