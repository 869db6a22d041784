#include "cdcl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cdcl/errors.hpp"

namespace cdcl {

GradReport grad_check(const std::string& op_name, const ScalarClosure& closure,
                      std::vector<Tensor> inputs, double tolerance) {
  GradReport report{op_name, 0.0, tolerance, false, {}};
  for (auto& in : inputs) {
    if (!in.is_leaf() || !in.requires_grad()) {
      throw ContractError("grad_check: inputs must be leaves that require gradients");
    }
    in.zero_grad();
  }

  Tensor loss = closure(inputs);
  if (loss.numel() != 1) throw ContractError("grad_check: closure must return a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  const double h = kFiniteDifferenceStep;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto vals = inputs[t].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = closure(inputs).item();
      vals[i] = saved - h;
      const double down = closure(inputs).item();
      vals[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        std::ostringstream os;
        os << "non-finite gradient at input " << t << " element " << i << ": analytic " << a
           << ", numeric " << numeric;
        report.diagnostic = os.str();
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.passed = false;
        return report;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        if (rel > tolerance) {
          std::ostringstream os;
          os << "input " << t << " element " << i << ": analytic " << a << ", numeric " << numeric;
          report.diagnostic = os.str();
        }
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace cdcl
