#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"
#include "end2/distortions/distortions.hpp"
#include "end2/losses/losses.hpp"
#include "end2/models/checkpoint.hpp"
#include "end2/models/models.hpp"
#include "end2/training/dataset.hpp"
#include "end2/training/optimizer.hpp"

namespace end2::training {

enum class TraceEvent { Forward, Backward, OptimizerStep, MomentumUpdate, Swap, Skip };
std::string to_string(TraceEvent e);

/// Called with each event and the step counter at the time it happened.
using TraceObserver = std::function<void(TraceEvent, std::int64_t)>;

struct TrainerState {
  std::int64_t step = 0;
  models::ModelBundle models;
  int teacher_index = 0;
  // Roles used by the most recent step; exported with the checkpoint.
  int last_teacher_index = 0;
  int last_student_index = 1;
  AdamState encoder_opt;
  std::array<AdamState, 2> decoder_opt;
  AdamState projection_opt;
  torch::Tensor dino_center;

  int student_index() const noexcept { return 1 - teacher_index; }
  models::Decoder& teacher() { return models.decoders[static_cast<std::size_t>(teacher_index)]; }
  models::Decoder& student() { return models.decoders[static_cast<std::size_t>(student_index())]; }
};

/// Intermediate tensors of one forward pass. Single-decoder strategies fill
/// the student slots with their only decoder's output on the distorted image.
struct ForwardResult {
  ImageBatch marked;
  ImageBatch distorted;
  std::string distortion;
  FeatureVector z_teacher;
  FeatureVector z_student;
  torch::Tensor m_teacher;
  torch::Tensor m_student;
  losses::LossTerms terms;
  losses::WeightedTotal total;
};

struct StepResult {
  losses::LossBreakdown losses;
  std::string distortion;
  bool skipped = false;
  bool swapped = false;
};

/// δ_t <- τ·δ_t + (1-τ)·δ_s in place. Throws ContractError on schema mismatch
/// or τ outside [0,1].
void momentum_update(ParameterSet& teacher, const ParameterSet& student, double tau);

/// Exchanges the Teacher/Student tags when (state.step + 1) % k == 0.
/// Returns whether a swap happened. Throws ConfigError for k < 1.
bool maybe_swap(TrainerState& state, int k);

/// Strategy checks that need the distortion registry: VanillaEND requires a
/// fully differentiable suite. Throws ConfigError.
void validate_strategy(const RunConfig& config);

/// One training strategy bound to a set of models.
///
/// END² (with its ablations) runs both decoders; VanillaEND, ForwardASL and
/// TDSL use decoder 0 only.
class Trainer {
 public:
  /// Initialises fresh models from config.seed.
  explicit Trainer(RunConfig config);
  Trainer(RunConfig config, models::ModelBundle models, int teacher_index = 0);

  /// Builds the loss for (x, m) at the current step without updating anything.
  /// With include_student=false the student branch is left out entirely.
  ForwardResult forward(const ImageBatch& x, const torch::Tensor& messages, bool include_student = true);

  /// One step: forward, backward, optimizer, momentum update, swap.
  /// Throws NumericalAbort when the loss is not finite.
  StepResult train_step(const ImageBatch& x, const torch::Tensor& messages);

  /// TDSL only: whether the current step belongs to the decoder-only stage.
  bool in_second_stage() const noexcept;

  void set_observer(TraceObserver observer) { observer_ = std::move(observer); }
  TrainerState& state() noexcept { return state_; }
  const TrainerState& state() const noexcept { return state_; }
  const RunConfig& config() const noexcept { return config_; }
  const distortions::DistortionSuite& suite() const noexcept { return suite_; }

  models::Checkpoint checkpoint() const;
  /// The decoder selected by train.export_decoder.
  models::Decoder export_decoder() const;

 private:
  void emit(TraceEvent e) const;
  bool dual() const noexcept;
  ForwardResult forward_dual(const ImageBatch& x, const torch::Tensor& m, bool include_student);
  ForwardResult forward_single(const ImageBatch& x, const torch::Tensor& m);
  void zero_grads();

  RunConfig config_;
  distortions::DistortionSuite suite_;
  Adam optimizer_;
  TrainerState state_;
  TraceObserver observer_;
};

struct TrainLoopOptions {
  /// Checkpoints (step_<N>.ckpt, final.ckpt, and nan_abort.ckpt on abort)
  /// go here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Line-delimited JSON training log when set.
  std::optional<std::filesystem::path> log_path;
  /// Fixed held-out crops for periodic evaluation.
  std::optional<ImageBatch> heldout;
  std::optional<std::int64_t> steps;  // overrides config.train.steps
  TraceObserver observer;
};

struct TrainResult {
  models::Checkpoint checkpoint;
  std::vector<losses::LossBreakdown> history;
  std::vector<nlohmann::json> evaluations;
  std::int64_t skipped = 0;
  std::int64_t epochs = 0;
};

/// Full training run. Reproducible bit for bit given config and seed when
/// train.deterministic is set.
TrainResult train_loop(const RunConfig& config, const ImageDataset& train, const TrainLoopOptions& options = {});

/// Applies the thread settings of `config`.
void configure_threads(const TrainConfig& config);

}  // namespace end2::training
