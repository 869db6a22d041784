#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace cdcl {

// Scores and binary relevance flags aligned by index.
struct RankedPredictions {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Non-interpolated average precision. Items are ranked by descending score;
/// ties keep their input order. Returns nullopt when there is no positive.
std::optional<double> average_precision(const RankedPredictions& preds);

/// Reference AP computed by pairwise counting, O(n^2). Shares no code with
/// average_precision and exists to cross-check it.
std::optional<double> ap_oracle(const RankedPredictions& preds);

struct MetricsReport {
  std::vector<std::optional<double>> per_class_ap;
  double map = 0.0;
  std::size_t n_samples = 0;
  std::vector<std::size_t> excluded_classes;  // classes without positives
};

// Mean of the defined per-class APs. Throws ContractError when no class has a
// positive.
MetricsReport mean_average_precision(const std::vector<RankedPredictions>& per_class);

}  // namespace cdcl
