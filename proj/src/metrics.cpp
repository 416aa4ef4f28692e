#include "rrwkv/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "rrwkv/errors.hpp"

namespace rrwkv {

namespace {

constexpr std::size_t kWin = 11;

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (a.numel() == 0) throw ShapeError(std::string(op) + ": empty images");
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double total = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double x = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-x * x / (2 * 1.5 * 1.5));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of an H x W field.
std::vector<double> filter(const std::vector<double>& f, std::size_t H, std::size_t W,
                           const std::array<double, kWin>& g) {
  const std::size_t Ho = H - kWin + 1, Wo = W - kWin + 1;
  std::vector<double> rows(H * Wo), out(Ho * Wo);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) s += g[k] * f[y * W + x + k];
      rows[y * Wo + x] = s;
    }
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) s += g[k] * rows[(y + k) * Wo + x];
      out[y * Wo + x] = s;
    }
  return out;
}

MeanStd stats(const std::vector<ImageMetrics>& v, double ImageMetrics::*field) {
  MeanStd r;
  if (v.empty()) return r;
  for (const auto& m : v) r.mean += m.*field;
  r.mean /= static_cast<double>(v.size());
  if (!std::isfinite(r.mean)) return r;
  double var = 0;
  for (const auto& m : v) var += (m.*field - r.mean) * (m.*field - r.mean);
  r.std = std::sqrt(var / static_cast<double>(v.size()));
  return r;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  check_pair(a, b, "psnr");
  if (!(max_val > 0)) throw ConfigError("psnr: max_val must be positive");
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / e);
}

double rmse(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "rmse");
  return std::sqrt(mse(a, b));
}

double ssim(const Tensor& a, const Tensor& b, double max_val) {
  check_pair(a, b, "ssim");
  if (a.rank() != 3 || a.dim(2) != 1) throw ShapeError("ssim: expected H x W x 1 images");
  const std::size_t H = a.dim(0), W = a.dim(1);
  if (H < kWin || W < kWin)
    throw ConfigError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                      " is smaller than the 11x11 window");
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  const auto g = gaussian_window();
  const std::vector<double> x(a.data().begin(), a.data().end()), y(b.data().begin(), b.data().end());
  std::vector<double> xx(H * W), yy(H * W), xy(H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter(x, H, W, g), my = filter(y, H, W, g);
  const auto sxx = filter(xx, H, W, g), syy = filter(yy, H, W, g), sxy = filter(xy, H, W, g);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

void MetricReport::add(std::string id, const Tensor& restored, const Tensor& reference) {
  per_image.push_back(
      {std::move(id), rrwkv::psnr(restored, reference), rrwkv::ssim(restored, reference),
       rrwkv::rmse(restored, reference)});
}

MeanStd MetricReport::psnr() const { return stats(per_image, &ImageMetrics::psnr); }
MeanStd MetricReport::ssim() const { return stats(per_image, &ImageMetrics::ssim); }
MeanStd MetricReport::rmse() const { return stats(per_image, &ImageMetrics::rmse); }

std::string MetricReport::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "id,psnr,ssim,rmse\n";
  for (const auto& m : per_image) os << m.id << ',' << m.psnr << ',' << m.ssim << ',' << m.rmse << '\n';
  os << "mean," << psnr().mean << ',' << ssim().mean << ',' << rmse().mean << '\n';
  return os.str();
}

}  // namespace rrwkv
