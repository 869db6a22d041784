#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdcl/tensor.hpp"

namespace cdcl {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  // Empty on success; otherwise names the offending input/element.
  std::string diagnostic;
};

using ScalarClosure = std::function<Tensor(const std::vector<Tensor>&)>;

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Compares reverse-mode gradients of `closure` against central differences
/// for every element of every input. Inputs must be leaves with
/// `requires_grad`; their values are perturbed in place and restored.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
GradReport grad_check(const std::string& op_name, const ScalarClosure& closure,
                      std::vector<Tensor> inputs, double tolerance);

}  // namespace cdcl
