#include "end2/training/optimizer.hpp"

#include <cmath>

#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2::training {

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

AdamState Adam::init_state(const ParameterSet& params) const {
  AdamState s;
  for (const auto& [_, t] : params) {
    s.first_moment.push_back(torch::zeros_like(t, torch::MemoryFormat::Contiguous).detach());
    s.second_moment.push_back(torch::zeros_like(t, torch::MemoryFormat::Contiguous).detach());
  }
  return s;
}

void Adam::step(ParameterSet& params, AdamState& state) const {
  if (state.first_moment.size() != params.size()) throw ContractError("Adam state does not match parameter set");
  torch::NoGradGuard no_grad;
  ++state.steps;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(state.steps));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(state.steps));
  const double step_size = lr_ / correction1;
  const double sqrt_correction2 = std::sqrt(correction2);

  std::size_t i = 0;
  for (auto& [_, p] : params) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    ++i;
    const auto& g = p.grad();
    if (!g.defined()) {
      m.mul_(beta1_);
      v.mul_(beta2_);
    } else {
      m.mul_(beta1_).add_(g, 1.0 - beta1_);
      v.mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    }
    auto denom = (v.sqrt() / sqrt_correction2).add_(eps_);
    p.addcdiv_(m, denom, -step_size);
  }
}

}  // namespace end2::training
