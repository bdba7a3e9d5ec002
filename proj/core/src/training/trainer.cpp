#include "end2/training/trainer.hpp"

#include <cmath>
#include <fstream>

#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/rng.hpp"
#include "end2/evaluation/benchmark.hpp"

namespace end2::training {

std::string to_string(TraceEvent e) {
  switch (e) {
    case TraceEvent::Forward: return "forward";
    case TraceEvent::Backward: return "backward";
    case TraceEvent::OptimizerStep: return "optimizer_step";
    case TraceEvent::MomentumUpdate: return "momentum_update";
    case TraceEvent::Swap: return "swap";
    case TraceEvent::Skip: return "skip";
  }
  return "unknown";
}

void momentum_update(ParameterSet& teacher, const ParameterSet& student, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("momentum factor must lie in [0,1]");
  teacher.require_same_schema(student, "momentum update");
  torch::NoGradGuard no_grad;
  ParameterSet::blend_into(teacher, tau, student);
}

bool maybe_swap(TrainerState& state, int k) {
  if (k < 1) throw ConfigError("swap interval must be >= 1");
  if ((state.step + 1) % k != 0) return false;
  state.teacher_index = 1 - state.teacher_index;
  state.teacher().set_role(models::Role::Teacher);
  state.student().set_role(models::Role::Student);
  return true;
}

namespace {

TrainerState make_state(const RunConfig& config, models::ModelBundle models, int teacher_index, const Adam& adam) {
  if (teacher_index != 0 && teacher_index != 1) throw ConfigError("teacher index must be 0 or 1");
  TrainerState s{.models = std::move(models)};
  s.teacher_index = teacher_index;
  s.teacher().set_role(models::Role::Teacher);
  s.student().set_role(models::Role::Student);
  s.encoder_opt = adam.init_state(s.models.encoder.parameters());
  s.decoder_opt[0] = adam.init_state(s.models.decoders[0].parameters());
  s.decoder_opt[1] = adam.init_state(s.models.decoders[1].parameters());
  s.projection_opt = adam.init_state(s.models.projection.parameters());
  const auto dtype = config.model.double_precision ? torch::kFloat64 : torch::kFloat32;
  s.dino_center = torch::zeros({1, config.model.projection_dim}, torch::TensorOptions().dtype(dtype));
  return s;
}

}  // namespace

void validate_strategy(const RunConfig& config) {
  if (config.strategy.variant != Variant::VanillaEnd) return;
  if (!distortions::DistortionSuite::from_config(config.distortions).all_differentiable()) {
    throw ConfigError("VanillaEND needs differentiable distortions; the suite contains a gradient-blocked-only entry");
  }
}

Trainer::Trainer(RunConfig config) : Trainer(config, models::init_models(config, config.seed)) {}

Trainer::Trainer(RunConfig config, models::ModelBundle models, int teacher_index)
    : config_(std::move(config)),
      suite_(distortions::DistortionSuite::from_config(config_.distortions)),
      optimizer_(config_.train.learning_rate),
      state_(make_state(config_, std::move(models), teacher_index, optimizer_)) {
  validate_strategy(config_);
  if (config_.train.swap_interval < 1) throw ConfigError("swap interval must be >= 1");
  if (dual()) {
    state_.last_teacher_index = state_.teacher_index;
    state_.last_student_index = state_.student_index();
  } else {
    state_.last_teacher_index = 0;
    state_.last_student_index = 0;
  }
}

void Trainer::emit(TraceEvent e) const {
  if (observer_) observer_(e, state_.step);
}

bool Trainer::dual() const noexcept { return config_.strategy.variant == Variant::End2; }

bool Trainer::in_second_stage() const noexcept {
  if (config_.strategy.variant != Variant::Tdsl) return false;
  const auto boundary = static_cast<std::int64_t>(
      std::llround(config_.strategy.tdsl_stage1_fraction * static_cast<double>(config_.train.steps)));
  return state_.step >= boundary;
}

ForwardResult Trainer::forward(const ImageBatch& x, const torch::Tensor& messages, bool include_student) {
  emit(TraceEvent::Forward);
  return dual() ? forward_dual(x, messages, include_student) : forward_single(x, messages);
}

ForwardResult Trainer::forward_dual(const ImageBatch& x, const torch::Tensor& m, bool include_student) {
  const auto& strategy = config_.strategy;
  const auto step = static_cast<std::uint64_t>(state_.step);
  auto& teacher = state_.teacher();
  auto& student = state_.student();

  ForwardResult r;
  r.marked = state_.models.encoder.encode(x, m);
  r.z_teacher = teacher.extract_features(r.marked);
  r.m_teacher = teacher.predict_message(r.z_teacher);
  r.terms.quality = losses::quality_loss(r.marked, x);

  if (include_student) {
    const auto& d = suite_.sample(derive_seed(config_.seed, "distortion", step), step);
    r.distortion = d.label();
    r.distorted = distortions::apply_blocked(d, r.marked, x, derive_seed(config_.seed, "distortion.apply", step));
    r.z_student = student.extract_features(r.distorted);
    r.m_student = student.predict_message(r.z_student);
    r.terms.msg = losses::message_loss(r.m_teacher, r.m_student, m, strategy.student_msg_weight);
    if (strategy.feature_alignment) {
      auto& proj = state_.models.projection;
      switch (strategy.alignment) {
        case AlignmentLoss::Cosine:
          r.terms.align = losses::feature_alignment_loss(proj.project(r.z_student), proj.project(r.z_teacher));
          break;
        case AlignmentLoss::Mse:
          r.terms.align = losses::mse_alignment_loss(r.z_student, r.z_teacher);
          break;
        case AlignmentLoss::Dino:
          r.terms.align = losses::dino_alignment_loss(proj.map(r.z_student), proj.map(r.z_teacher), state_.dino_center);
          break;
      }
    }
  } else {
    r.terms.msg = losses::message_loss(r.m_teacher, torch::Tensor(), m);
  }
  r.total = losses::total_loss(r.terms, config_.loss.at_step(state_.step));
  return r;
}

ForwardResult Trainer::forward_single(const ImageBatch& x, const torch::Tensor& m) {
  const auto step = static_cast<std::uint64_t>(state_.step);
  auto& decoder = state_.models.decoders[0];
  const auto& encoder = state_.models.encoder;
  const auto& d = suite_.sample(derive_seed(config_.seed, "distortion", step), step);
  const auto apply_seed = derive_seed(config_.seed, "distortion.apply", step);

  ForwardResult r;
  switch (config_.strategy.variant) {
    case Variant::VanillaEnd: {
      r.marked = encoder.encode(x, m);
      r.distortion = d.label();
      r.distorted = ImageBatch{d.apply(r.marked.data, x.data, apply_seed)};
      r.z_student = decoder.extract_features(r.distorted);
      break;
    }
    case Variant::ForwardAsl: {
      r.marked = encoder.encode(x, m);
      r.distortion = d.label();
      r.distorted = distortions::apply_blocked(d, r.marked, x, apply_seed);
      // Forward value is the distorted image; the gradient takes the clean path.
      const ImageBatch routed{r.distorted.data + (r.marked.data - r.marked.data.detach())};
      r.z_student = decoder.extract_features(routed);
      break;
    }
    case Variant::Tdsl: {
      if (in_second_stage()) {
        {
          torch::NoGradGuard no_grad;
          r.marked = encoder.encode(x, m);
        }
        r.distortion = d.label();
        r.distorted = distortions::apply_blocked(d, r.marked, x, apply_seed);
      } else {
        r.marked = encoder.encode(x, m);
        r.distortion = "identity";
        r.distorted = r.marked;
      }
      r.z_student = decoder.extract_features(r.distorted);
      break;
    }
    case Variant::End2:
      throw ContractError("END2 uses the dual-decoder forward pass");
  }
  r.m_student = decoder.predict_message(r.z_student);
  r.terms.msg = losses::message_loss(r.m_student, torch::Tensor(), m);
  r.terms.quality = losses::quality_loss(r.marked, x);
  r.total = losses::total_loss(r.terms, config_.loss.at_step(state_.step));
  return r;
}

void Trainer::zero_grads() {
  state_.models.encoder.parameters().zero_grad();
  state_.models.decoders[0].parameters().zero_grad();
  state_.models.decoders[1].parameters().zero_grad();
  state_.models.projection.parameters().zero_grad();
}

StepResult Trainer::train_step(const ImageBatch& x, const torch::Tensor& messages) {
  StepResult out;
  ForwardResult r;
  try {
    r = forward(x, messages);
  } catch (const DegenerateProjectionError&) {
    emit(TraceEvent::Skip);
    out.skipped = true;
    ++state_.step;
    return out;
  }
  out.losses = r.total.breakdown;
  out.distortion = r.distortion;
  if (!std::isfinite(out.losses.total)) {
    throw NumericalAbort("non-finite loss at step " + std::to_string(state_.step));
  }

  zero_grads();
  emit(TraceEvent::Backward);
  r.total.total.backward();

  emit(TraceEvent::OptimizerStep);
  auto& s = state_;
  if (dual()) {
    optimizer_.step(s.models.encoder.parameters(), s.encoder_opt);
    const auto t = static_cast<std::size_t>(s.teacher_index);
    const auto st = static_cast<std::size_t>(s.student_index());
    optimizer_.step(s.models.decoders[st].parameters(), s.decoder_opt[st]);
    if (config_.strategy.teacher_update == TeacherUpdate::Optimizer) {
      optimizer_.step(s.models.decoders[t].parameters(), s.decoder_opt[t]);
    }
    optimizer_.step(s.models.projection.parameters(), s.projection_opt);

    if (config_.strategy.momentum_update) {
      emit(TraceEvent::MomentumUpdate);
      momentum_update(s.teacher().parameters(), s.student().parameters(), config_.train.momentum);
    }
    s.last_teacher_index = s.teacher_index;
    s.last_student_index = s.student_index();
    if (config_.strategy.swapping && maybe_swap(s, config_.train.swap_interval)) {
      emit(TraceEvent::Swap);
      out.swapped = true;
    }
  } else {
    if (!in_second_stage()) optimizer_.step(s.models.encoder.parameters(), s.encoder_opt);
    optimizer_.step(s.models.decoders[0].parameters(), s.decoder_opt[0]);
  }
  zero_grads();
  ++s.step;
  return out;
}

models::Checkpoint Trainer::checkpoint() const {
  return models::make_checkpoint(config_, state_.models, state_.step, state_.last_teacher_index,
                                 state_.last_student_index);
}

models::Decoder Trainer::export_decoder() const {
  return models::extraction_decoder(checkpoint(), config_.train.export_decoder);
}

void configure_threads(const TrainConfig& config) {
  torch::set_num_threads(config.deterministic ? 1 : std::max(1, config.threads));
}

namespace {

nlohmann::json loss_record(std::int64_t step, const StepResult& r, std::int64_t epoch) {
  return {{"step", step},
          {"l_align", r.losses.l_align},
          {"l_msg", r.losses.l_msg},
          {"l_quality", r.losses.l_quality},
          {"total", r.losses.total},
          {"distortion", r.distortion},
          {"epoch", epoch}};
}

}  // namespace

TrainResult train_loop(const RunConfig& config, const ImageDataset& train, const TrainLoopOptions& options) {
  validate(config);
  configure_threads(config.train);
  if (train.empty()) throw DataError("training dataset is empty");

  Trainer trainer(config);
  if (options.observer) trainer.set_observer(options.observer);
  CropSampler sampler(train, config.height, config.width, derive_seed(config.seed, "crops"));
  const auto dtype = models::Architecture::from(config).dtype();
  const auto steps = options.steps.value_or(config.train.steps);

  std::ofstream log;
  if (options.log_path) {
    log.open(*options.log_path);
    if (!log) throw DataError("cannot write " + options.log_path->string());
  }
  auto write_log = [&](const nlohmann::json& j) {
    if (log.is_open()) {
      log << j.dump() << "\n";
      log.flush();
    }
  };
  auto save = [&](const std::string& name) {
    if (options.checkpoint_dir) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      models::save_checkpoint(trainer.checkpoint(), *options.checkpoint_dir / name);
    }
  };

  TrainResult result;
  auto evaluate = [&](std::int64_t step) {
    eval::EvalOptions eo;
    eo.strength = config.eval.strength;
    eo.seed = derive_seed(config.seed, "heldout.eval");
    eo.batch_size = config.eval.batch_size;
    const auto& suite = trainer.suite().entries();
    auto report = eval::run_benchmark(trainer.state().models.encoder, trainer.export_decoder(), *options.heldout,
                                      std::vector<distortions::Distortion>(suite.begin(), suite.end()), eo);
    auto j = report.to_json();
    j["event"] = "eval";
    j["step"] = step;
    write_log(j);
    result.evaluations.push_back(j);
  };

  for (std::int64_t i = 0; i < steps; ++i) {
    auto x = sampler.next(config.train.batch_size);
    x.data = x.data.to(dtype);
    auto m = make_message_batch(derive_seed(config.seed, "messages", static_cast<std::uint64_t>(i)),
                                config.train.batch_size, config.message_length, dtype);
    StepResult r;
    try {
      r = trainer.train_step(x, m);
    } catch (const NumericalAbort& e) {
      write_log({{"event", "numerical_abort"}, {"step", i}, {"what", e.what()}});
      save("nan_abort.ckpt");
      throw;
    }
    result.history.push_back(r.losses);
    if (r.skipped) {
      ++result.skipped;
      write_log({{"event", "skip"}, {"step", i}, {"reason", "degenerate projection"}});
      continue;
    }
    const bool last = i + 1 == steps;
    if (config.train.log_every > 0 && ((i + 1) % config.train.log_every == 0 || last)) {
      write_log(loss_record(i, r, sampler.epoch()));
    }
    if (config.train.checkpoint_every > 0 && (i + 1) % config.train.checkpoint_every == 0 && !last) {
      save("step_" + std::to_string(i + 1) + ".ckpt");
    }
    if (options.heldout && config.train.eval_every > 0 && (i + 1) % config.train.eval_every == 0 && !last) {
      evaluate(i + 1);
    }
  }
  if (options.heldout) evaluate(steps);
  save("final.ckpt");
  result.checkpoint = trainer.checkpoint();
  result.epochs = sampler.epoch();
  return result;
}

}  // namespace end2::training
