#include "cdcl/model.hpp"

#include "cdcl/errors.hpp"
#include "cdcl/ops.hpp"
#include "cdcl/rng.hpp"

namespace cdcl {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_sbc: return "no_sbc";
    case Ablation::no_gap: return "no_gap";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_sbc") return Ablation::no_sbc;
  if (s == "no_gap") return Ablation::no_gap;
  throw ContractError("unknown ablation '" + s + "' (expected full, no_sbc or no_gap)");
}

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> errors;
  if (num_classes == 0) errors.push_back("num_classes must be >= 1");
  if (in_channels == 0) errors.push_back("in_channels must be >= 1");
  if (input.height < 32 || input.width < 32) errors.push_back("input size must be at least 32x32");
  if (channels.size() != kBackboneStages) {
    errors.push_back("channels must list exactly " + std::to_string(kBackboneStages) + " stages");
  }
  for (std::size_t c : channels) {
    if (c == 0) {
      errors.push_back("channels must be positive");
      break;
    }
  }
  if (ratio == 0) errors.push_back("ratio must be >= 1");
  if (num_heads == 0 || (!channels.empty() && channels.back() % num_heads != 0)) {
    errors.push_back("num_heads must divide the feature width");
  }
  if (ffn_mult == 0) errors.push_back("ffn_mult must be >= 1");
  return errors;
}

CdclModel CdclModel::create(const ModelConfig& config, std::uint64_t seed) {
  if (auto errors = config.validate(); !errors.empty()) {
    throw ContractError("invalid ModelConfig: " + errors.front());
  }
  Rng rng = derive_rng(seed, 0x30de1);
  CdclModel m;
  m.config = config;
  std::size_t in = config.in_channels;
  for (std::size_t out : config.channels) {
    m.backbone.push_back({init_uniform({out, in, 3, 3}, in * 9, rng), Tensor::full({out}, 1.0, true),
                          Tensor::zeros({out}, true)});
    in = out;
  }
  const std::size_t d = config.width();
  for (std::size_t i = 0; i < kSbcBlocks; ++i) {
    m.sbc.push_back(MhsaBlock::create(d, config.num_heads, config.ffn_mult, rng));
  }
  m.gap_head = LinearLayer::create(d, config.num_classes, rng);
  m.sbc_head = LinearLayer::create(d, config.num_classes, rng);
  m.aff_in = LinearLayer::create(2 * d, d, rng);
  m.aff_out = LinearLayer::create(d, 2, rng);
  return m;
}

ParamList CdclModel::params() const {
  ParamList out;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const std::string p = "backbone." + std::to_string(i);
    out.push_back({p + ".conv", backbone[i].weight});
    out.push_back({p + ".norm.gain", backbone[i].gain});
    out.push_back({p + ".norm.shift", backbone[i].shift});
  }
  for (std::size_t i = 0; i < sbc.size(); ++i) sbc[i].collect("sbc." + std::to_string(i), out);
  gap_head.collect("gap_head", out);
  sbc_head.collect("sbc_head", out);
  aff_in.collect("aff.in", out);
  aff_out.collect("aff.out", out);
  return out;
}

Tensor backbone_stage(const ConvStage& stage, const Tensor& x) {
  const Tensor y = conv2d(x, stage.weight, 2, 1);
  const Shape s = y.shape();
  const Tensor normed = reshape(layer_norm(reshape(y, {1, y.numel()}), {}, {}), s);
  return silu(channel_affine(normed, stage.gain, stage.shift));
}

Tensor backbone_forward(const CdclModel& model, const Tensor& image) {
  if (image.rank() != 3 || image.dim(1) < 32 || image.dim(2) < 32) {
    throw DimensionError("backbone needs a [c x H x W] image with H, W >= 32, got " + shape_str(image.shape()));
  }
  Tensor x = image;
  for (const auto& stage : model.backbone) x = backbone_stage(stage, x);
  return x;
}

LapGeometry lap_geometry(std::size_t h_f, std::size_t w_f, std::size_t r) {
  if (r == 0) throw ContractError("lap: r must be >= 1");
  if (h_f == 0 || w_f == 0) throw DimensionError("lap: empty feature map");
  LapGeometry g{};
  g.kernel_h = std::max<std::size_t>(1, h_f / r);
  g.kernel_w = std::max<std::size_t>(1, w_f / r);
  g.stride_h = std::max<std::size_t>(1, g.kernel_h / 2);
  g.stride_w = std::max<std::size_t>(1, g.kernel_w / 2);
  g.out_h = (h_f - g.kernel_h) / g.stride_h + 1;
  g.out_w = (w_f - g.kernel_w) / g.stride_w + 1;
  return g;
}

Tensor gap(const Tensor& features) {
  if (features.rank() != 3) throw DimensionError("gap expects [d x h x w], got " + shape_str(features.shape()));
  return reshape(avg_pool2d(features, features.dim(1), features.dim(2), 1, 1), {features.dim(0)});
}

Tensor lap(const Tensor& features, std::size_t r) {
  if (features.rank() != 3) throw DimensionError("lap expects [d x h x w], got " + shape_str(features.shape()));
  const LapGeometry g = lap_geometry(features.dim(1), features.dim(2), r);
  return avg_pool2d(features, g.kernel_h, g.kernel_w, g.stride_h, g.stride_w);
}

Tensor sbc_forward(const CdclModel& model, const Tensor& local_features) {
  const std::size_t d = model.config.width();
  if (local_features.rank() != 3 || local_features.dim(0) != d) {
    throw DimensionError("sbc expects [" + std::to_string(d) + " x h x w], got " +
                         shape_str(local_features.shape()));
  }
  const std::size_t n = local_features.dim(1) * local_features.dim(2);
  Tensor seq = transpose(reshape(local_features, {d, n}));
  for (const auto& block : model.sbc) seq = mhsa_forward(block, seq);
  return mean(seq, 0);
}

AffOutput aff_forward(const CdclModel& model, const Tensor& global_feature, const Tensor& local_feature,
                      const std::optional<std::array<double, 2>>& override_weights) {
  const std::size_t d = model.config.width();
  if (global_feature.shape() != Shape{d} || local_feature.shape() != Shape{d}) {
    throw DimensionError("aff expects two [" + std::to_string(d) + "] features");
  }
  AffOutput out;
  if (override_weights) {
    out.weights = Tensor::from({2}, {(*override_weights)[0], (*override_weights)[1]});
  } else {
    const Tensor stacked = reshape(concat({global_feature, local_feature}, 0), {1, 2 * d});
    const Tensor hidden = silu(linear_forward(model.aff_in, stacked));
    out.weights = reshape(softmax(linear_forward(model.aff_out, hidden), 1), {2});
  }
  const std::size_t c = model.config.num_classes;
  const Tensor scores = concat({reshape(linear_forward(model.gap_head, global_feature), {1, c}),
                                reshape(linear_forward(model.sbc_head, local_feature), {1, c})},
                               0);
  out.logits = reshape(matmul(reshape(out.weights, {1, 2}), scores), {c});
  out.probs = sigmoid(out.logits);
  return out;
}

ForwardTrace forward(const CdclModel& model, const Tensor& image, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  const Shape expected{cfg.in_channels, cfg.input.height, cfg.input.width};
  if (image.shape() != expected) {
    throw DimensionError("model expects input " + shape_str(expected) + ", got " + shape_str(image.shape()));
  }
  return head_forward(model, backbone_forward(model, image), options);
}

ForwardTrace head_forward(const CdclModel& model, const Tensor& features, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  if (features.rank() != 3 || features.dim(0) != cfg.width()) {
    throw DimensionError("head expects [" + std::to_string(cfg.width()) + " x h x w] features, got " +
                         shape_str(features.shape()));
  }
  ForwardTrace t;
  t.features = features;
  const std::size_t c = cfg.num_classes;

  if (cfg.ablation != Ablation::no_gap) t.global_feature = gap(t.features);
  if (cfg.ablation != Ablation::no_sbc) {
    t.local_features = lap(t.features, cfg.ratio);
    t.local_feature = sbc_forward(model, t.local_features);
  }

  switch (cfg.ablation) {
    case Ablation::full: {
      AffOutput aff = aff_forward(model, t.global_feature, t.local_feature, options.fusion_override);
      t.w = aff.weights.values()[0];
      t.w_s = aff.weights.values()[1];
      t.logits = aff.logits;
      t.probs = aff.probs;
      break;
    }
    case Ablation::no_sbc:
      t.w = 1.0;
      t.logits = reshape(linear_forward(model.gap_head, t.global_feature), {c});
      t.probs = sigmoid(t.logits);
      break;
    case Ablation::no_gap:
      t.w_s = 1.0;
      t.logits = reshape(linear_forward(model.sbc_head, t.local_feature), {c});
      t.probs = sigmoid(t.logits);
      break;
  }
  return t;
}

}  // namespace cdcl
