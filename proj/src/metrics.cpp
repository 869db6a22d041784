#include "cdcl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cdcl/errors.hpp"

namespace cdcl {

namespace {

void validate(const RankedPredictions& preds) {
  if (preds.scores.size() != preds.labels.size()) {
    throw ContractError("ranked predictions: " + std::to_string(preds.scores.size()) + " scores vs " +
                        std::to_string(preds.labels.size()) + " labels");
  }
  for (int l : preds.labels) {
    if (l != 0 && l != 1) throw ContractError("ranked predictions: labels must be 0 or 1");
  }
}

}  // namespace

std::optional<double> average_precision(const RankedPredictions& preds) {
  validate(preds);
  std::vector<std::size_t> order(preds.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds.scores[a] > preds.scores[b];
  });

  double precision_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (preds.labels[order[rank]] == 1) {
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return precision_sum / static_cast<double>(hits);
}

MetricsReport mean_average_precision(const std::vector<RankedPredictions>& per_class) {
  MetricsReport report;
  report.n_samples = per_class.empty() ? 0 : per_class.front().scores.size();
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    auto ap = average_precision(per_class[k]);
    report.per_class_ap.push_back(ap);
    if (ap) {
      total += *ap;
      ++defined;
    } else {
      report.excluded_classes.push_back(k);
    }
  }
  if (defined == 0) throw ContractError("mAP undefined: no class has a positive sample");
  report.map = total / static_cast<double>(defined);
  return report;
}

}  // namespace cdcl
