#include "cdcl/mixup.hpp"

#include <algorithm>

#include "cdcl/errors.hpp"

namespace cdcl {

MixupPair mix(const Sample& target, const Sample& source, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ContractError("mix: lambda must lie in (0, 1)");
  if (target.domain != Domain::target || source.domain != Domain::source) {
    throw ContractError("mix: expects a target sample and a source sample");
  }
  if (target.labels.size() != source.labels.size()) {
    throw DimensionError("mix: label widths differ (" + std::to_string(target.labels.size()) + " vs " +
                         std::to_string(source.labels.size()) + ")");
  }
  const Tensor src = align_channels(resize_keep_aspect(source.image, target.height(), target.width()),
                                    target.channels());
  auto xt = target.image.values();
  auto xs = src.values();
  std::vector<double> px(xt.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = lambda * xt[i] + (1.0 - lambda) * xs[i];
    // Rounding can step one ulp outside the convex hull of the two pixels.
    px[i] = std::clamp(v, std::min(xt[i], xs[i]), std::max(xt[i], xs[i]));
  }

  MixupPair out;
  out.mixed_image = Tensor::from(target.image.shape(), std::move(px));
  out.mixed_labels.resize(target.labels.size());
  for (std::size_t k = 0; k < target.labels.size(); ++k) {
    out.mixed_labels[k] = lambda * target.labels[k] + (1.0 - lambda) * source.labels[k];
  }
  out.lambda = lambda;
  out.source_id = source.id;
  out.target_id = target.id;
  return out;
}

Tensor Batch::image(std::size_t row) const {
  const Shape& s = images.shape();
  const std::size_t plane = s[1] * s[2] * s[3];
  auto v = images.values();
  return Tensor::from({s[1], s[2], s[3]}, std::vector<double>(v.begin() + row * plane, v.begin() + (row + 1) * plane));
}

namespace {

class BatchWriter {
 public:
  BatchWriter(std::size_t rows, const Sample& first) : rows_(rows), shape_(first.image.shape()) {
    images_.reserve(rows * first.image.numel());
    labels_.reserve(rows * first.labels.size());
    classes_ = first.labels.size();
  }

  void push(const Tensor& image, const std::vector<double>& labels, RowKind kind, std::string id) {
    if (image.shape() != shape_) {
      throw DimensionError("batch rows must share one geometry: " + shape_str(image.shape()) + " vs " +
                           shape_str(shape_));
    }
    if (labels.size() != classes_) throw DimensionError("batch rows must share one label width");
    auto v = image.values();
    images_.insert(images_.end(), v.begin(), v.end());
    labels_.insert(labels_.end(), labels.begin(), labels.end());
    batch_.kinds.push_back(kind);
    batch_.ids.push_back(std::move(id));
  }

  Batch finish() {
    batch_.images = Tensor::from({rows_, shape_[0], shape_[1], shape_[2]}, std::move(images_));
    batch_.labels = Tensor::from({rows_, classes_}, std::move(labels_));
    return std::move(batch_);
  }

 private:
  std::size_t rows_;
  Shape shape_;
  std::size_t classes_ = 0;
  std::vector<double> images_;
  std::vector<double> labels_;
  Batch batch_;
};

}  // namespace

Batch assemble_batch(const std::vector<const Sample*>& targets, const std::vector<Sample>& source_pool,
                     double lambda, Rng& rng) {
  if (targets.empty()) throw ContractError("assemble_batch: no targets");
  if (source_pool.empty()) throw ContractError("assemble_batch: empty source pool");
  BatchWriter w(2 * targets.size(), *targets.front());
  for (const Sample* t : targets) w.push(t->image, t->labels, RowKind::target, t->id);
  for (const Sample* t : targets) {
    const Sample& s = source_pool[uniform_index(rng, source_pool.size())];
    MixupPair m = mix(*t, s, lambda);
    w.push(m.mixed_image, m.mixed_labels, RowKind::mixup, m.target_id + "+" + m.source_id);
  }
  return w.finish();
}

Batch assemble_target_batch(const std::vector<const Sample*>& rows) {
  if (rows.empty()) throw ContractError("assemble_target_batch: no rows");
  BatchWriter w(rows.size(), *rows.front());
  for (const Sample* t : rows) w.push(t->image, t->labels, RowKind::target, t->id);
  return w.finish();
}

std::vector<const Sample*> draw_targets(const std::vector<Sample>& pool, std::size_t count, Rng& rng) {
  if (pool.empty()) throw ContractError("draw_targets: empty target pool");
  std::vector<const Sample*> out;
  out.reserve(count);
  if (pool.size() < count) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(&pool[uniform_index(rng, pool.size())]);
    return out;
  }
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    out.push_back(&pool[idx[i]]);
  }
  return out;
}

Batch build_batch(const std::vector<Sample>& target_pool, const std::vector<Sample>& source_pool,
                  std::size_t b, double lambda, Rng& rng) {
  if (b == 0) throw ContractError("build_batch: b must be >= 1");
  if (source_pool.empty()) throw ContractError("build_batch: empty source pool");
  return assemble_batch(draw_targets(target_pool, b, rng), source_pool, lambda, rng);
}

Batch build_batch_no_source(const std::vector<Sample>& target_pool, std::size_t b, Rng& rng) {
  if (b == 0) throw ContractError("build_batch_no_source: b must be >= 1");
  return assemble_target_batch(draw_targets(target_pool, 2 * b, rng));
}

}  // namespace cdcl
