#pragma once

#include <cstdint>
#include <vector>

#include <torch/types.h>

#include "end2/core/parameter_set.hpp"

namespace end2::training {

/// First/second moment slots for one ParameterSet. The state belongs to the
/// parameters it was created for and travels with them (decoder swaps do not
/// touch it).
struct AdamState {
  std::vector<torch::Tensor> first_moment;
  std::vector<torch::Tensor> second_moment;
  std::int64_t steps = 0;
};

/// Adam with bias correction and a fixed learning rate.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  AdamState init_state(const ParameterSet& params) const;

  /// Applies one update from the accumulated .grad() of each tensor; entries
  /// without a gradient are treated as having a zero gradient.
  void step(ParameterSet& params, AdamState& state) const;

  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
};

}  // namespace end2::training
