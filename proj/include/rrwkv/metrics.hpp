#pragma once

#include <string>
#include <vector>

#include "rrwkv/tensor.hpp"

namespace rrwkv {

// 10 log10(max_val^2 / MSE); +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Mean local SSIM on H x W x 1 images: 11x11 Gaussian window (sigma 1.5) over
// every fully contained position, K1 = 0.01, K2 = 0.03.
double ssim(const Tensor& a, const Tensor& b, double max_val = 1.0);

double rmse(const Tensor& a, const Tensor& b);

struct ImageMetrics {
  std::string id;
  double psnr = 0, ssim = 0, rmse = 0;
};

struct MeanStd {
  double mean = 0, std = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;

  void add(std::string id, const Tensor& restored, const Tensor& reference);
  // Population statistics over per_image; infinite PSNRs propagate.
  MeanStd psnr() const;
  MeanStd ssim() const;
  MeanStd rmse() const;
  // id,psnr,ssim,rmse rows plus a final "mean" row.
  std::string csv() const;
};

}  // namespace rrwkv
