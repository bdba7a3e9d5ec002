#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace end2 {

/// Fixed-length binary payload. Every element is exactly 0 or 1.
class BitMessage {
 public:
  BitMessage() = default;
  explicit BitMessage(std::vector<std::uint8_t> bits);

  std::size_t size() const noexcept { return bits_.size(); }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::uint8_t operator[](std::size_t i) const { return bits_.at(i); }

  /// "0110..." form; inverse of from_string.
  std::string to_string() const;
  static BitMessage from_string(std::string_view text);

  /// Shape (n,) tensor of 0/1 values.
  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;
  /// Thresholds a (n,) tensor of scores in [0,1] at 0.5.
  static BitMessage from_scores(const torch::Tensor& scores);

  friend bool operator==(const BitMessage&, const BitMessage&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Pure function of (seed, n). Throws ConfigError when n < 1.
BitMessage make_message(std::uint64_t seed, int n);

/// (batch, n) tensor of independent messages; row i equals make_message(derive(seed, i), n).
torch::Tensor make_message_batch(std::uint64_t seed, int batch, int n, torch::Dtype dtype = torch::kFloat32);

/// Batch of RGB images, shape (batch, 3, h, w), values in [0, 1].
struct ImageBatch {
  torch::Tensor data;

  std::int64_t batch() const { return data.size(0); }
  std::int64_t height() const { return data.size(2); }
  std::int64_t width() const { return data.size(3); }
};

/// Latent decoder features z, shape (batch, d).
struct FeatureVector {
  torch::Tensor values;
};

/// Unit-norm projected features, shape (batch, d_proj).
struct ProjectedVector {
  torch::Tensor values;
};

inline constexpr std::int64_t kMinImageSide = 16;

/// Clamps to [0,1]. Throws ShapeError for anything but (b,3,h,w) with h,w >= 16
/// and DataError when any value is NaN or infinite.
ImageBatch validate_image(const torch::Tensor& x);

}  // namespace end2
