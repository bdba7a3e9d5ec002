#pragma once

#include <array>
#include <cstdint>

#include <torch/types.h>

#include "end2/core/config.hpp"
#include "end2/core/parameter_set.hpp"
#include "end2/core/types.hpp"

namespace end2::models {

/// Shape contract shared by all three networks.
struct Architecture {
  int message_length = 8;
  int height = 32;
  int width = 32;
  ModelConfig model;

  torch::Dtype dtype() const { return model.double_precision ? torch::kFloat64 : torch::kFloat32; }
  static Architecture from(const RunConfig& config);
};

/// Watermark encoder f(x, m).
///
/// Image features from a small conv stack are concatenated with a spatial
/// message map (the message expanded by a linear layer onto a coarse grid and
/// tiled up to the image size) and the cover itself; a fusion conv then
/// predicts an additive residual. The output is clamped to [0,1].
class Encoder {
 public:
  Encoder(Architecture arch, ParameterSet params);
  static Encoder initialize(const Architecture& arch, std::uint64_t seed);

  /// messages: (batch, n) of 0/1 values. `strength` scales the embedded
  /// residual: x + strength*(f(x,m) - x), clamped; strength 1 is f itself.
  ImageBatch encode(const ImageBatch& x, const torch::Tensor& messages, double strength = 1.0) const;
  /// Same message for every batch element.
  ImageBatch encode(const ImageBatch& x, const BitMessage& message, double strength = 1.0) const;

  const Architecture& architecture() const noexcept { return arch_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 private:
  Architecture arch_;
  ParameterSet params_;
};

enum class Role { Teacher, Student };

/// Decoder g = head(features(x)): a strided conv feature extractor ending in
/// global average pooling to R^d, followed by one linear layer to n logits.
class Decoder {
 public:
  Decoder(Architecture arch, ParameterSet params, Role role);
  static Decoder initialize(const Architecture& arch, std::uint64_t seed, Role role);

  FeatureVector extract_features(const ImageBatch& x) const;
  /// Sigmoid-squashed head outputs in [0,1], shape (batch, n). Bit = score > 0.5.
  torch::Tensor predict_message(const FeatureVector& z) const;
  /// predict_message(extract_features(x)).
  torch::Tensor decode(const ImageBatch& x) const;

  Role role() const noexcept { return role_; }
  void set_role(Role role) noexcept { role_ = role; }
  const Architecture& architecture() const noexcept { return arch_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 private:
  Architecture arch_;
  ParameterSet params_;
  Role role_;
};

/// Bias-free linear map R^d -> R^d_proj followed by L2 normalisation.
class ProjectionHead {
 public:
  ProjectionHead(Architecture arch, ParameterSet params);
  static ProjectionHead initialize(const Architecture& arch, std::uint64_t seed);

  /// Raw linear image of z, before normalisation.
  torch::Tensor map(const FeatureVector& z) const;
  /// Unit-norm projection. Throws DegenerateProjectionError when any row of
  /// map(z) has norm below 1e-12.
  ProjectedVector project(const FeatureVector& z) const;

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 private:
  Architecture arch_;
  ParameterSet params_;
};

inline constexpr double kDegenerateNorm = 1e-12;

struct ModelBundle {
  Encoder encoder;
  std::array<Decoder, 2> decoders;
  ProjectionHead projection;
};

/// Deterministic for a fixed seed. The two decoders share an architecture but
/// draw their parameters independently; decoder 0 starts as Teacher.
ModelBundle init_models(const RunConfig& config, std::uint64_t seed);

/// Parameter schema of each component, used to validate loaded checkpoints.
ParameterSet encoder_schema(const Architecture& arch);
ParameterSet decoder_schema(const Architecture& arch);
ParameterSet projection_schema(const Architecture& arch);

}  // namespace end2::models
