#include "end2/core/types.hpp"

#include <random>

#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/rng.hpp"

namespace end2 {

BitMessage::BitMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ConfigError("message bits must be 0 or 1");
  }
}

std::string BitMessage::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

BitMessage BitMessage::from_string(std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw ConfigError("message string may only contain '0' and '1'");
    bits.push_back(c == '1');
  }
  return BitMessage(std::move(bits));
}

torch::Tensor BitMessage::to_tensor(torch::Dtype dtype) const {
  auto t = torch::empty({static_cast<std::int64_t>(bits_.size())}, torch::kFloat64);
  auto acc = t.accessor<double, 1>();
  for (std::size_t i = 0; i < bits_.size(); ++i) acc[static_cast<std::int64_t>(i)] = bits_[i];
  return t.to(dtype);
}

BitMessage BitMessage::from_scores(const torch::Tensor& scores) {
  if (scores.dim() != 1) throw ShapeError("from_scores expects a 1-D tensor");
  auto s = scores.detach().to(torch::kFloat64).contiguous();
  auto acc = s.accessor<double, 1>();
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(s.size(0)));
  for (std::int64_t i = 0; i < s.size(0); ++i) bits[static_cast<std::size_t>(i)] = acc[i] > 0.5;
  return BitMessage(std::move(bits));
}

BitMessage make_message(std::uint64_t seed, int n) {
  if (n < 1) throw ConfigError("message length must be >= 1, got " + std::to_string(n));
  std::mt19937_64 engine(seed);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
  for (auto& b : bits) b = static_cast<std::uint8_t>(engine() >> 63);
  return BitMessage(std::move(bits));
}

torch::Tensor make_message_batch(std::uint64_t seed, int batch, int n, torch::Dtype dtype) {
  if (batch < 1) throw ConfigError("message batch must be >= 1");
  std::vector<torch::Tensor> rows;
  rows.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    rows.push_back(make_message(derive_seed(seed, "message", static_cast<std::uint64_t>(i)), n).to_tensor(dtype));
  }
  return torch::stack(rows);
}

ImageBatch validate_image(const torch::Tensor& x) {
  if (!x.defined() || x.dim() != 4) throw ShapeError("image batch must have shape (b,3,h,w)");
  if (x.size(1) != 3) throw ShapeError("image batch must have 3 channels, got " + std::to_string(x.size(1)));
  if (x.size(2) < kMinImageSide || x.size(3) < kMinImageSide) {
    throw ShapeError("image sides must be >= 16, got " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)));
  }
  if (!torch::isfinite(x).all().item<bool>()) throw DataError("image batch contains NaN or Inf values");
  return ImageBatch{x.clamp(0.0, 1.0)};
}

}  // namespace end2
