#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/types.h>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"

namespace end2::distortions {

/// A named, parameterised image transform ("noise layer").
///
/// Registered names and parameters (defaults in parentheses):
///   identity
///   gaussian_noise   std (0.01)            additive N(0, std^2), clamped
///   gaussian_filter  sigma (2)             separable blur, radius ceil(3 sigma)
///   jpeg_real        Q (50)                real codec round trip, 8-bit
///   rotate           deg (10)  [-45,45]    random sign, bilinear, zero fill
///   translate        dis (0.05) [0,0.5]    fraction of width and height, random signs
///   scale            f (0.65)  (0,2]       zoom about the centre
///   shear            s (0.1)   [-1,1]      horizontal shear, random sign
///   crop             p (0.1)   (0,1]       keep ceil(p*h*w) pixels, zero the rest
///   dropout          p (0.5)   (0,1]       p-fraction of pixels taken from the cover
///   cropout          p (0.5)   (0,1]       one rectangle of area ~p taken from the cover
///   color            jitter (0.2) [0,1)    brightness/contrast/saturation in [1-j, 1+j]
///   external         (command required)    black-box program per image
///
/// Every transform keeps the (b,3,h,w) shape and is deterministic given the seed.
class Distortion {
 public:
  /// Validates name and parameters; throws ConfigError.
  static Distortion from_entry(const DistortionEntry& entry);
  static Distortion parse(const std::string& spec) { return from_entry(parse_distortion(spec)); }

  const std::string& name() const noexcept { return entry_.name; }
  double param(const std::string& key) const;
  const DistortionEntry& entry() const noexcept { return entry_; }
  /// "jpeg_real(Q=50)"
  std::string label() const;

  /// Metadata: whether autograd can see through the transform. END² training
  /// blocks gradients regardless.
  bool intrinsically_differentiable() const noexcept;
  bool needs_cover() const noexcept;

  /// Applies the transform. For differentiable kinds the result stays attached
  /// to `marked`'s graph; use apply_blocked for the gradient barrier.
  torch::Tensor apply(const torch::Tensor& marked, const torch::Tensor& cover, std::uint64_t seed) const;

 private:
  explicit Distortion(DistortionEntry entry) : entry_(std::move(entry)) {}
  DistortionEntry entry_;
};

/// sg[psi(marked)]: the distorted batch with no gradient linkage to `marked`.
/// Throws DistortionFailedError naming the distortion on internal failure.
ImageBatch apply_blocked(const Distortion& d, const ImageBatch& marked, const ImageBatch& cover, std::uint64_t seed);
ImageBatch apply_blocked(const Distortion& d, const ImageBatch& marked, std::uint64_t seed);

ImageBatch jpeg_real(const ImageBatch& marked, int quality);

enum class GeometricKind { Rotate, Translate, Scale, Shear, Crop };
ImageBatch geometric(const ImageBatch& marked, GeometricKind kind, double param, std::uint64_t seed);

enum class MaskKind { Dropout, Cropout };
/// Throws ConfigError when `cover` is undefined.
ImageBatch masking(const ImageBatch& marked, const ImageBatch& cover, MaskKind kind, double p, std::uint64_t seed);

/// Runs the program once per image on temporary PNG files.
ImageBatch external_command(const ImageBatch& marked, const ExternalCommandSpec& spec);

/// The (h, w) 0/1 mask used by crop: exactly ceil(p*h*w) ones forming a
/// near-square block at a seeded position.
torch::Tensor crop_mask(std::int64_t h, std::int64_t w, double p, std::uint64_t seed);

/// Codec identification recorded in run metadata.
std::string codec_version();

/// Weighted list of distortions.
class DistortionSuite {
 public:
  /// Throws ConfigError for an empty suite or non-positive weights.
  static DistortionSuite from_config(const SuiteConfig& config);

  /// Random mode: weight-proportional draw from `seed`. Fixed mode: entries in
  /// order, cycling with `index`.
  const Distortion& sample(std::uint64_t seed, std::uint64_t index = 0) const;

  const std::vector<Distortion>& entries() const noexcept { return entries_; }
  SuiteMode mode() const noexcept { return mode_; }
  bool all_differentiable() const noexcept;

 private:
  SuiteMode mode_ = SuiteMode::RandomOneOf;
  std::vector<Distortion> entries_;
  std::vector<double> cumulative_;
};

}  // namespace end2::distortions
