#include "end2/models/models.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/rng.hpp"

namespace end2::models {

namespace F = torch::nn::functional;

namespace {

enum class Init { Zero, HeUniform, LinearUniform, SmallUniform };

struct LayerSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  Init init;
};

std::int64_t fan_in(const std::vector<std::int64_t>& shape) {
  std::int64_t f = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
  return f;
}

void conv(std::vector<LayerSpec>& out, const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k,
          Init init) {
  out.push_back({name + ".weight", {cout, cin, k, k}, init});
  out.push_back({name + ".bias", {cout}, Init::Zero});
}

std::vector<LayerSpec> encoder_layers(const Architecture& a) {
  const auto& m = a.model;
  const std::int64_t c = m.encoder_channels;
  const std::int64_t grid = m.message_grid;
  std::vector<LayerSpec> l;
  conv(l, "enc.in", c, 3, 3, Init::HeUniform);
  for (int i = 0; i < m.encoder_blocks; ++i) conv(l, "enc.block" + std::to_string(i), c, c, 3, Init::HeUniform);
  l.push_back({"msg.weight", {m.message_channels * grid * grid, a.message_length}, Init::LinearUniform});
  l.push_back({"msg.bias", {m.message_channels * grid * grid}, Init::Zero});
  conv(l, "fuse", c, c + m.message_channels + 3, 3, Init::HeUniform);
  conv(l, "out", 3, c, 1, Init::SmallUniform);
  return l;
}

std::vector<LayerSpec> decoder_layers(const Architecture& a) {
  const auto& m = a.model;
  const std::int64_t c = m.decoder_channels;
  std::vector<LayerSpec> l;
  conv(l, "dec.in", c, 3, 3, Init::HeUniform);
  for (int i = 0; i < m.decoder_blocks; ++i) conv(l, "dec.down" + std::to_string(i), c, c, 3, Init::HeUniform);
  conv(l, "dec.feat", m.latent_dim, c, 3, Init::LinearUniform);
  l.push_back({"head.weight", {a.message_length, m.latent_dim}, Init::LinearUniform});
  l.push_back({"head.bias", {a.message_length}, Init::Zero});
  return l;
}

std::vector<LayerSpec> projection_layers(const Architecture& a) {
  return {{"proj.weight", {a.model.projection_dim, a.model.latent_dim}, Init::LinearUniform}};
}

ParameterSet build(const std::vector<LayerSpec>& layers, torch::Dtype dtype, std::optional<std::uint64_t> seed) {
  torch::NoGradGuard no_grad;
  ParameterSet ps;
  std::optional<at::Generator> gen;
  if (seed) gen = at::make_generator<at::CPUGeneratorImpl>(*seed);
  for (const auto& spec : layers) {
    // Sample in double so both precisions see the same draws.
    auto t = torch::zeros(spec.shape, torch::kFloat64);
    if (gen && spec.init != Init::Zero) {
      const double f = static_cast<double>(fan_in(spec.shape));
      double bound = 0.0;
      switch (spec.init) {
        case Init::HeUniform:
          bound = std::sqrt(6.0 / f);
          break;
        case Init::LinearUniform:
          bound = std::sqrt(3.0 / f);
          break;
        case Init::SmallUniform:
          bound = 0.1 * std::sqrt(3.0 / f);
          break;
        case Init::Zero:
          break;
      }
      t.uniform_(-bound, bound, *gen);
    }
    ps.add(spec.name, t.to(dtype).contiguous().requires_grad_(true));
  }
  return ps;
}

void check_image(const ImageBatch& x, const Architecture& arch, const char* who) {
  const auto& t = x.data;
  if (!t.defined() || t.dim() != 4 || t.size(1) != 3) throw ShapeError(std::string(who) + ": expected (b,3,h,w) images");
  if (t.size(2) < kMinImageSide || t.size(3) < kMinImageSide) {
    throw ShapeError(std::string(who) + ": image sides must be >= 16");
  }
  if (t.scalar_type() != arch.dtype()) throw ShapeError(std::string(who) + ": image dtype does not match model dtype");
}

torch::Tensor conv_relu(const torch::Tensor& x, const ParameterSet& p, const std::string& name, std::int64_t stride) {
  return torch::relu(torch::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, 1));
}

}  // namespace

Architecture Architecture::from(const RunConfig& config) {
  Architecture a;
  a.message_length = config.message_length;
  a.height = config.height;
  a.width = config.width;
  a.model = config.model;
  return a;
}

ParameterSet encoder_schema(const Architecture& arch) { return build(encoder_layers(arch), arch.dtype(), {}); }
ParameterSet decoder_schema(const Architecture& arch) { return build(decoder_layers(arch), arch.dtype(), {}); }
ParameterSet projection_schema(const Architecture& arch) { return build(projection_layers(arch), arch.dtype(), {}); }

// ---------------------------------------------------------------------------

Encoder::Encoder(Architecture arch, ParameterSet params) : arch_(std::move(arch)), params_(std::move(params)) {
  encoder_schema(arch_).require_same_schema(params_, "encoder parameters");
}

Encoder Encoder::initialize(const Architecture& arch, std::uint64_t seed) {
  return Encoder(arch, build(encoder_layers(arch), arch.dtype(), seed));
}

ImageBatch Encoder::encode(const ImageBatch& x, const torch::Tensor& messages, double strength) const {
  check_image(x, arch_, "encode");
  if (messages.dim() != 2 || messages.size(1) != arch_.message_length) {
    throw ConfigError("encode: message length " + std::to_string(messages.dim() == 2 ? messages.size(1) : -1) +
                      " does not match configured n=" + std::to_string(arch_.message_length));
  }
  if (messages.size(0) != x.batch()) throw ShapeError("encode: message batch does not match image batch");
  const auto& p = params_;
  const auto& m = arch_.model;
  const std::int64_t b = x.batch();
  const std::int64_t h = x.height();
  const std::int64_t w = x.width();

  auto feat = conv_relu(x.data, p, "enc.in", 1);
  for (int i = 0; i < m.encoder_blocks; ++i) feat = conv_relu(feat, p, "enc.block" + std::to_string(i), 1);

  auto grid = torch::linear(messages.to(arch_.dtype()), p.at("msg.weight"), p.at("msg.bias"))
                  .view({b, m.message_channels, m.message_grid, m.message_grid});
  auto msg_map = F::interpolate(grid, F::InterpolateFuncOptions()
                                          .size(std::vector<std::int64_t>{h, w})
                                          .mode(torch::kNearest));

  auto fused = conv_relu(torch::cat({feat, msg_map, x.data}, 1), p, "fuse", 1);
  auto residual = torch::conv2d(fused, p.at("out.weight"), p.at("out.bias"));
  auto marked = (x.data + residual).clamp(0.0, 1.0);
  if (strength == 1.0) return ImageBatch{marked};
  return ImageBatch{(x.data + strength * (marked - x.data)).clamp(0.0, 1.0)};
}

ImageBatch Encoder::encode(const ImageBatch& x, const BitMessage& message, double strength) const {
  if (static_cast<int>(message.size()) != arch_.message_length) {
    throw ConfigError("encode: message length " + std::to_string(message.size()) + " does not match configured n=" +
                      std::to_string(arch_.message_length));
  }
  auto row = message.to_tensor(arch_.dtype()).unsqueeze(0).expand({x.batch(), -1});
  return encode(x, row, strength);
}

// ---------------------------------------------------------------------------

Decoder::Decoder(Architecture arch, ParameterSet params, Role role)
    : arch_(std::move(arch)), params_(std::move(params)), role_(role) {
  decoder_schema(arch_).require_same_schema(params_, "decoder parameters");
}

Decoder Decoder::initialize(const Architecture& arch, std::uint64_t seed, Role role) {
  return Decoder(arch, build(decoder_layers(arch), arch.dtype(), seed), role);
}

FeatureVector Decoder::extract_features(const ImageBatch& x) const {
  check_image(x, arch_, "extract_features");
  const auto& p = params_;
  auto h = conv_relu(x.data, p, "dec.in", 1);
  for (int i = 0; i < arch_.model.decoder_blocks; ++i) h = conv_relu(h, p, "dec.down" + std::to_string(i), 2);
  h = torch::conv2d(h, p.at("dec.feat.weight"), p.at("dec.feat.bias"), 1, 1);
  return FeatureVector{h.mean({2, 3})};
}

torch::Tensor Decoder::predict_message(const FeatureVector& z) const {
  if (z.values.dim() != 2 || z.values.size(1) != arch_.model.latent_dim) {
    throw ShapeError("predict_message: feature dimension must be " + std::to_string(arch_.model.latent_dim));
  }
  return torch::sigmoid(torch::linear(z.values, params_.at("head.weight"), params_.at("head.bias")));
}

torch::Tensor Decoder::decode(const ImageBatch& x) const { return predict_message(extract_features(x)); }

// ---------------------------------------------------------------------------

ProjectionHead::ProjectionHead(Architecture arch, ParameterSet params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  projection_schema(arch_).require_same_schema(params_, "projection parameters");
}

ProjectionHead ProjectionHead::initialize(const Architecture& arch, std::uint64_t seed) {
  return ProjectionHead(arch, build(projection_layers(arch), arch.dtype(), seed));
}

torch::Tensor ProjectionHead::map(const FeatureVector& z) const {
  if (z.values.dim() != 2 || z.values.size(1) != arch_.model.latent_dim) {
    throw ShapeError("project: feature dimension must be " + std::to_string(arch_.model.latent_dim));
  }
  return torch::linear(z.values, params_.at("proj.weight"));
}

ProjectedVector ProjectionHead::project(const FeatureVector& z) const {
  auto mapped = map(z);
  auto norms = mapped.norm(2, {1}, /*keepdim=*/true);
  if ((norms < kDegenerateNorm).any().item<bool>()) {
    throw DegenerateProjectionError("projected feature has norm below 1e-12");
  }
  return ProjectedVector{mapped / norms};
}

// ---------------------------------------------------------------------------

ModelBundle init_models(const RunConfig& config, std::uint64_t seed) {
  const auto arch = Architecture::from(config);
  return ModelBundle{
      Encoder::initialize(arch, derive_seed(seed, "init.encoder")),
      {Decoder::initialize(arch, derive_seed(seed, "init.decoder", 0), Role::Teacher),
       Decoder::initialize(arch, derive_seed(seed, "init.decoder", 1), Role::Student)},
      ProjectionHead::initialize(arch, derive_seed(seed, "init.projection")),
  };
}

}  // namespace end2::models
