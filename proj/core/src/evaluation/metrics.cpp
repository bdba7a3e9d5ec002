#include "end2/evaluation/metrics.hpp"

#include <cmath>

#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2::eval {

namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(who) + ": input shapes differ");
}

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

double psnr_from_mse(double mse) { return mse == 0.0 ? kIdenticalPsnr : 10.0 * std::log10(1.0 / mse); }

torch::Tensor gaussian_taps() {
  const int r = kSsimWindow / 2;
  auto k = torch::arange(-r, r + 1, torch::kFloat64);
  k = torch::exp(-(k * k) / (2.0 * kSsimSigma * kSsimSigma));
  return k / k.sum();
}

// SSIM map per (image, channel), valid positions only. The Gaussian window is
// applied as two 1-D passes over all five moment images at once.
torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto channels = a.size(1);
  const auto groups = 5 * channels;
  const auto taps = gaussian_taps();
  const auto rows = taps.view({1, 1, kSsimWindow, 1}).expand({groups, 1, kSsimWindow, 1}).contiguous();
  const auto cols = taps.view({1, 1, 1, kSsimWindow}).expand({groups, 1, 1, kSsimWindow}).contiguous();
  auto moments = torch::cat({a, b, a * a, b * b, a * b}, 1);
  moments = torch::conv2d(moments, rows, torch::Tensor(), 1, torch::IntArrayRef{0, 0}, 1, groups);
  moments = torch::conv2d(moments, cols, torch::Tensor(), 1, torch::IntArrayRef{0, 0}, 1, groups);
  const auto m = moments.split(channels, 1);
  const auto& mu_a = m[0];
  const auto& mu_b = m[1];
  auto var_a = m[2] - mu_a * mu_a;
  auto var_b = m[3] - mu_b * mu_b;
  auto cov = m[4] - mu_a * mu_b;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace

double bit_accuracy(const torch::Tensor& scores, const torch::Tensor& bits) {
  same_shape(scores, bits, "bit_accuracy");
  if (scores.numel() == 0) throw ShapeError("bit_accuracy: empty input");
  auto decided = scores.detach() > 0.5;
  auto truth = bits.detach() > 0.5;
  return (decided == truth).to(torch::kFloat64).mean().item<double>();
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  same_shape(a, b, "psnr");
  auto diff = a.detach().to(torch::kFloat64) - b.detach().to(torch::kFloat64);
  return psnr_from_mse(diff.pow(2).mean().item<double>());
}

std::vector<double> psnr_per_image(const torch::Tensor& a, const torch::Tensor& b) {
  same_shape(a, b, "psnr");
  auto diff = as_batch(a.detach().to(torch::kFloat64)) - as_batch(b.detach().to(torch::kFloat64));
  auto mse = diff.pow(2).flatten(1).mean(1).contiguous();
  std::vector<double> out(static_cast<std::size_t>(mse.size(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = psnr_from_mse(mse[static_cast<std::int64_t>(i)].item<double>());
  return out;
}

std::vector<double> ssim_per_image(const torch::Tensor& a, const torch::Tensor& b) {
  same_shape(a, b, "ssim");
  auto x = as_batch(a.detach().to(torch::kFloat64));
  auto y = as_batch(b.detach().to(torch::kFloat64));
  if (x.dim() != 4) throw ShapeError("ssim: expected (3,h,w) or (b,3,h,w)");
  if (x.size(2) < kSsimWindow || x.size(3) < kSsimWindow) {
    throw ConfigError("ssim: image is smaller than the 11x11 window");
  }
  auto per_image = ssim_map(x, y).flatten(1).mean(1).contiguous();
  std::vector<double> out(static_cast<std::size_t>(per_image.size(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = per_image[static_cast<std::int64_t>(i)].item<double>();
  return out;
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  auto v = ssim_per_image(a, b);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace end2::eval
