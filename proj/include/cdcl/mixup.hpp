#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdcl/data.hpp"
#include "cdcl/rng.hpp"

namespace cdcl {

inline constexpr double kDefaultLambda = 0.7;

struct MixupPair {
  Tensor mixed_image;  // target geometry
  std::vector<double> mixed_labels;
  double lambda = kDefaultLambda;
  std::string source_id;
  std::string target_id;
};

// The source image is first brought to the target's geometry
// (resize_keep_aspect, then align_channels). Pixels are
// lambda * x_t + (1 - lambda) * x_s; labels use the same expression with no
// further rounding.
MixupPair mix(const Sample& target, const Sample& source, double lambda);

enum class RowKind { target, mixup };

// Rows [0, b) are targets; under mixup, row b + i mixes target row i.
struct Batch {
  Tensor images;  // [2b x c x H x W]
  Tensor labels;  // [2b x C]
  std::vector<RowKind> kinds;
  std::vector<std::string> ids;

  std::size_t rows() const { return kinds.size(); }
  // Untracked copy of one row, [c x H x W].
  Tensor image(std::size_t row) const;
};

// Pairs each given target with a uniformly drawn source sample.
Batch assemble_batch(const std::vector<const Sample*>& targets, const std::vector<Sample>& source_pool,
                     double lambda, Rng& rng);

// Stacks the given target samples unchanged.
Batch assemble_target_batch(const std::vector<const Sample*>& rows);

// Draws `count` pool members, without replacement when the pool is large
// enough and with replacement otherwise.
std::vector<const Sample*> draw_targets(const std::vector<Sample>& pool, std::size_t count, Rng& rng);

// b targets plus their b mixup counterparts.
Batch build_batch(const std::vector<Sample>& target_pool, const std::vector<Sample>& source_pool,
                  std::size_t b, double lambda, Rng& rng);

// Same batch geometry with the mixup rows replaced by further targets.
Batch build_batch_no_source(const std::vector<Sample>& target_pool, std::size_t b, Rng& rng);

}  // namespace cdcl
