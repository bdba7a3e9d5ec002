#pragma once

#include <torch/types.h>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"

namespace end2::losses {

/// Scalar loss values of one step. total is exactly
/// lambda_align*l_align + lambda_msg*l_msg + lambda_quality*l_quality.
struct LossBreakdown {
  double l_align = 0.0;
  double l_msg = 0.0;
  double l_quality = 0.0;
  double total = 0.0;
};

/// Differentiable loss terms; undefined tensors stand for absent terms.
struct LossTerms {
  torch::Tensor align;
  torch::Tensor msg;
  torch::Tensor quality;
};

inline constexpr double kUnitNormTolerance = 1e-4;

/// 2 - 2<s, sg[t]> averaged over the batch; equals |s - t|^2 for unit rows.
/// The teacher side is detached inside. Throws ContractError when any row of
/// either input deviates from unit norm by more than 1e-4.
torch::Tensor feature_alignment_loss(const ProjectedVector& student, const ProjectedVector& teacher);

/// Mean squared error between student features and detached teacher features.
torch::Tensor mse_alignment_loss(const FeatureVector& student, const FeatureVector& teacher);

/// Self-distillation cross-entropy between a centred, sharpened teacher
/// distribution and the student distribution over projection outputs.
struct DinoSettings {
  double student_temperature = 0.1;
  double teacher_temperature = 0.04;
  double center_momentum = 0.9;
};
/// `center` (1, d_proj) is read and then updated in place from the teacher batch.
torch::Tensor dino_alignment_loss(const torch::Tensor& student_proj, const torch::Tensor& teacher_proj,
                                  torch::Tensor& center, const DinoSettings& settings = {});

/// Mean-squared form of |m_t - m| + w*|m_s - m|, each term averaged over bits
/// and batch. m_s may be undefined (single-decoder strategies). Throws
/// ShapeError on length mismatch.
torch::Tensor message_loss(const torch::Tensor& m_teacher, const torch::Tensor& m_student, const torch::Tensor& m,
                           double student_weight = 1.0);

/// Mean squared pixel error. Throws ShapeError on shape mismatch.
torch::Tensor quality_loss(const ImageBatch& marked, const ImageBatch& cover);

struct WeightedTotal {
  torch::Tensor total;
  LossBreakdown breakdown;
};

/// Weighted sum; absent terms count as zero and contribute no gradient.
WeightedTotal total_loss(const LossTerms& terms, const LossConfig& weights);

}  // namespace end2::losses
