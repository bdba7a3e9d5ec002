#include "end2/losses/losses.hpp"

#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2::losses {

namespace {

void require_unit_rows(const torch::Tensor& v, const char* which) {
  if (v.dim() != 2) throw ShapeError(std::string("feature_alignment_loss: ") + which + " must be (batch, d)");
  auto deviation = (v.detach().norm(2, {1}) - 1.0).abs().max().item<double>();
  // Non-finite features pass through so the caller's NaN check can report them.
  if (deviation > kUnitNormTolerance) {
    throw ContractError(std::string("feature_alignment_loss: ") + which + " is not unit norm (deviation " +
                        std::to_string(deviation) + ")");
  }
}

double value(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

}  // namespace

torch::Tensor feature_alignment_loss(const ProjectedVector& student, const ProjectedVector& teacher) {
  require_unit_rows(student.values, "student");
  require_unit_rows(teacher.values, "teacher");
  if (student.values.sizes() != teacher.values.sizes()) throw ShapeError("feature_alignment_loss: shape mismatch");
  auto cosine = (student.values * teacher.values.detach()).sum(1);
  return (2.0 - 2.0 * cosine).mean();
}

torch::Tensor mse_alignment_loss(const FeatureVector& student, const FeatureVector& teacher) {
  if (student.values.sizes() != teacher.values.sizes()) throw ShapeError("mse_alignment_loss: shape mismatch");
  return (student.values - teacher.values.detach()).pow(2).mean();
}

torch::Tensor dino_alignment_loss(const torch::Tensor& student_proj, const torch::Tensor& teacher_proj,
                                  torch::Tensor& center, const DinoSettings& settings) {
  if (student_proj.sizes() != teacher_proj.sizes()) throw ShapeError("dino_alignment_loss: shape mismatch");
  auto teacher = teacher_proj.detach();
  if (!center.defined()) center = torch::zeros({1, teacher.size(1)}, teacher.options());
  auto target = torch::softmax((teacher - center) / settings.teacher_temperature, 1);
  auto log_student = torch::log_softmax(student_proj / settings.student_temperature, 1);
  auto loss = -(target * log_student).sum(1).mean();
  {
    torch::NoGradGuard no_grad;
    center = center * settings.center_momentum + teacher.mean(0, true) * (1.0 - settings.center_momentum);
  }
  return loss;
}

torch::Tensor message_loss(const torch::Tensor& m_teacher, const torch::Tensor& m_student, const torch::Tensor& m,
                           double student_weight) {
  if (m_teacher.sizes() != m.sizes()) throw ShapeError("message_loss: teacher prediction and message lengths differ");
  auto loss = (m_teacher - m).pow(2).mean();
  if (m_student.defined()) {
    if (m_student.sizes() != m.sizes()) throw ShapeError("message_loss: student prediction and message lengths differ");
    loss = loss + student_weight * (m_student - m).pow(2).mean();
  }
  return loss;
}

torch::Tensor quality_loss(const ImageBatch& marked, const ImageBatch& cover) {
  if (marked.data.sizes() != cover.data.sizes()) throw ShapeError("quality_loss: image shapes differ");
  return (marked.data - cover.data).pow(2).mean();
}

WeightedTotal total_loss(const LossTerms& terms, const LossConfig& weights) {
  WeightedTotal out;
  auto& b = out.breakdown;
  b.l_align = value(terms.align);
  b.l_msg = value(terms.msg);
  b.l_quality = value(terms.quality);
  b.total = weights.lambda_align * b.l_align + weights.lambda_msg * b.l_msg + weights.lambda_quality * b.l_quality;

  auto add = [&](const torch::Tensor& term, double w) {
    if (!term.defined()) return;
    auto weighted = w * term;
    out.total = out.total.defined() ? out.total + weighted : weighted;
  };
  add(terms.align, weights.lambda_align);
  add(terms.msg, weights.lambda_msg);
  add(terms.quality, weights.lambda_quality);
  if (!out.total.defined()) out.total = torch::zeros({}, torch::kFloat64);
  return out;
}

}  // namespace end2::losses
