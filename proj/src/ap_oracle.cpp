#include "cdcl/metrics.hpp"

#include "cdcl/errors.hpp"

namespace cdcl {

// Item j is ranked at or before item i when its score is higher, or equal
// with an earlier input index.
std::optional<double> ap_oracle(const RankedPredictions& preds) {
  const auto& s = preds.scores;
  const auto& y = preds.labels;
  if (s.size() != y.size()) throw ContractError("ap_oracle: misaligned predictions");

  double total = 0.0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++positives;
    int rank = 0;
    int hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool ahead = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (ahead) {
        ++rank;
        if (y[j] == 1) ++hits;
      }
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  if (positives == 0) return std::nullopt;
  return total / positives;
}

}  // namespace cdcl
