#include "cdcl/optim.hpp"

#include <cmath>
#include <numbers>

#include "cdcl/errors.hpp"

namespace cdcl {

void sgd_step(SgdState& state, const std::vector<Tensor>& params, double lr) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: learning rate must be >= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("sgd_step: non-finite gradient in parameter " + std::to_string(i) +
                           " of shape " + shape_str(params[i].shape()));
      }
    }
  }
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  if (state.velocity.size() != params.size()) {
    throw ContractError("sgd_step: optimizer state tracks " + std::to_string(state.velocity.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto theta = p.mutable_values();
    auto& v = state.velocity[i];
    if (v.size() != theta.size()) throw ContractError("sgd_step: velocity shape does not mirror parameter");
    const bool has_grad = p.has_grad();
    auto grad = p.grad();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = (has_grad ? grad[j] : 0.0) + state.weight_decay * theta[j];
      v[j] = state.momentum * v[j] + g;
      theta[j] -= lr * v[j];
    }
  }
}

double cosine_lr(const CosineSchedule& schedule, std::size_t t) {
  if (schedule.total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
  if (t > schedule.total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(t) + " beyond horizon " +
                        std::to_string(schedule.total_steps));
  }
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return schedule.min_lr + (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(phase)) / 2.0;
}

}  // namespace cdcl
