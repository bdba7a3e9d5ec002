#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace end2 {

/// Black-box image-to-image program. `args` may contain the placeholders
/// {input} and {output}, replaced by temporary PNG paths per image.
struct ExternalCommandSpec {
  std::string executable;
  std::vector<std::string> args;
  double timeout_seconds = 30.0;
  int max_parallel = 1;

  friend bool operator==(const ExternalCommandSpec&, const ExternalCommandSpec&) = default;
};

struct DistortionEntry {
  std::string name;
  std::map<std::string, double> params;
  double weight = 1.0;
  std::optional<ExternalCommandSpec> command;

  friend bool operator==(const DistortionEntry&, const DistortionEntry&) = default;
};

enum class SuiteMode { Fixed, RandomOneOf };

struct SuiteConfig {
  SuiteMode mode = SuiteMode::RandomOneOf;
  std::vector<DistortionEntry> entries;

  friend bool operator==(const SuiteConfig&, const SuiteConfig&) = default;
};

enum class Variant { End2, VanillaEnd, ForwardAsl, Tdsl };
enum class AlignmentLoss { Cosine, Mse, Dino };
enum class TeacherUpdate { Optimizer, MomentumOnly };
enum class ExportDecoder { Student, Teacher, Average };

struct StrategyConfig {
  Variant variant = Variant::End2;
  // Ablation switches; only meaningful for End2. All three on is full END².
  bool feature_alignment = true;
  bool momentum_update = true;
  bool swapping = true;
  AlignmentLoss alignment = AlignmentLoss::Cosine;
  // Optimizer for all parameters (default) or teacher moved by momentum only.
  TeacherUpdate teacher_update = TeacherUpdate::Optimizer;
  // Weight of the student term inside the message loss.
  double student_msg_weight = 1.0;
  double tdsl_stage1_fraction = 0.5;

  friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

struct ModelConfig {
  int latent_dim = 128;
  int projection_dim = 256;
  int encoder_channels = 32;
  int encoder_blocks = 2;
  int message_channels = 8;
  int message_grid = 4;
  int decoder_channels = 32;
  int decoder_blocks = 2;
  bool double_precision = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossConfig {
  double lambda_align = 0.01;
  double lambda_msg = 8.0;
  double lambda_quality = 5.0;
  // Optional linear ramp of lambda_quality towards lambda_quality_final over
  // steps [quality_ramp_start, quality_ramp_end]. Off while the final weight is 0.
  double lambda_quality_final = 0.0;
  std::int64_t quality_ramp_start = 0;
  std::int64_t quality_ramp_end = 0;

  /// Weights in effect at `step`.
  LossConfig at_step(std::int64_t step) const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 8e-4;
  int batch_size = 16;
  std::int64_t steps = 2000;
  double momentum = 0.999;  // tau
  int swap_interval = 1;    // k
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::int64_t eval_every = 0;        // 0 = no periodic held-out evaluation
  std::int64_t log_every = 1;
  ExportDecoder export_decoder = ExportDecoder::Student;
  bool deterministic = true;
  int threads = 1;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
  std::string train_dir;
  std::string heldout_dir;
  int eval_samples = 128;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  double strength = 1.0;
  int batch_size = 32;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int message_length = 8;
  int height = 32;
  int width = 32;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  StrategyConfig strategy;
  SuiteConfig distortions;
  DataConfig data;
  EvalConfig eval;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Named starting points: "desk" (32x32, n=8) and "paper" (128x128, n=30).
RunConfig preset_config(const std::string& name);

/// Throws ConfigError describing the first violated constraint.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
/// Overlays `overrides` onto `base`; unknown keys are a ConfigError.
RunConfig merge_json(const RunConfig& base, const nlohmann::json& overrides);

/// Reads a JSON config file. The "preset" key (or `preset_override`) chooses the
/// base; every other key overrides it. The result is validated.
RunConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override = {});
void save_config(const RunConfig& config, const std::filesystem::path& path);

std::string to_string(Variant v);
std::string to_string(AlignmentLoss a);
Variant parse_variant(const std::string& s);
AlignmentLoss parse_alignment(const std::string& s);

/// Parses "identity", "jpeg_real(Q=50)", "gaussian_noise(std=0.01)" style specs.
DistortionEntry parse_distortion(const std::string& spec);
std::string describe_params(const DistortionEntry& entry);

/// Distortion suites used by the benchmarks: "table2" (nine single distortions),
/// "combined" (the random mixed suite), "jpeg_sweep" (Q = 50..10), "train_desk"
/// (identity, gaussian_noise, jpeg_real Q=50), "identity".
SuiteConfig suite_preset(const std::string& name);

}  // namespace end2
