#pragma once

#include <cstddef>
#include <vector>

#include "cdcl/tensor.hpp"

namespace cdcl {

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
//   g' = g + weight_decay * theta
//   v  = momentum * v + g'
//   theta -= lr * v
struct SgdState {
  double momentum = 0.95;
  double weight_decay = 1e-4;
  double base_lr = 1e-3;
  std::vector<std::vector<double>> velocity;  // lazily sized to the params
};

// Reads each parameter's accumulated grad (absent grad counts as zero).
// Throws NumericError without touching anything if a gradient is non-finite.
void sgd_step(SgdState& state, const std::vector<Tensor>& params, double lr);

struct CosineSchedule {
  double base_lr = 1e-3;
  std::size_t total_steps = 1;
  double min_lr = 0.0;
};

// min_lr + (base_lr - min_lr) * (1 + cos(pi * t / total_steps)) / 2
double cosine_lr(const CosineSchedule& schedule, std::size_t t);

}  // namespace cdcl
