#pragma once

#include <limits>
#include <vector>

#include <torch/types.h>

namespace end2::eval {

/// PSNR of two identical images. Reported as "identical" in tables.
inline constexpr double kIdenticalPsnr = std::numeric_limits<double>::infinity();

/// Fraction of positions where (score > 0.5) equals the bit. Shapes must match.
double bit_accuracy(const torch::Tensor& scores, const torch::Tensor& bits);

/// 10*log10(1/MSE) over all elements, peak 1.0; kIdenticalPsnr when equal.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
/// One PSNR per batch element of (b,3,h,w) inputs.
std::vector<double> psnr_per_image(const torch::Tensor& a, const torch::Tensor& b);

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5) over valid positions,
/// K1=0.01, K2=0.03, peak 1.0, averaged over positions and channels.
/// Accepts (3,h,w) or (b,3,h,w); batches are averaged. Throws ConfigError
/// when the image is smaller than the window.
double ssim(const torch::Tensor& a, const torch::Tensor& b);
std::vector<double> ssim_per_image(const torch::Tensor& a, const torch::Tensor& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

}  // namespace end2::eval
