#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdcl/data.hpp"
#include "cdcl/nn.hpp"
#include "cdcl/tensor.hpp"

namespace cdcl {

// Which prediction paths the network uses.
enum class Ablation { full, no_sbc, no_gap };

const char* to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct ModelConfig {
  std::size_t num_classes = 8;
  std::size_t in_channels = 3;
  ImageSize input{64, 64};
  // One entry per stride-2 stage; the last entry is the feature width d.
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t ratio = 3;  // LAP scope ratio r
  std::size_t num_heads = 4;
  std::size_t ffn_mult = 2;
  Ablation ablation = Ablation::full;

  std::size_t width() const { return channels.back(); }
  std::vector<std::string> validate() const;
};

inline constexpr std::size_t kBackboneStages = 5;
inline constexpr std::size_t kSbcBlocks = 2;

struct ConvStage {
  Tensor weight;  // [out x in x 3 x 3]
  Tensor gain;    // [out]
  Tensor shift;   // [out]
};

struct CdclModel {
  ModelConfig config;
  std::vector<ConvStage> backbone;
  std::vector<MhsaBlock> sbc;
  LinearLayer gap_head;  // d -> C
  LinearLayer sbc_head;  // d -> C
  LinearLayer aff_in;    // 2d -> d
  LinearLayer aff_out;   // d -> 2

  static CdclModel create(const ModelConfig& config, std::uint64_t seed);
  // Stable names and order; every tensor is a trainable leaf.
  ParamList params() const;
};

// conv3x3 stride 2 pad 1 -> layer norm over the whole map with per-channel
// affine -> SiLU.
Tensor backbone_stage(const ConvStage& stage, const Tensor& x);
Tensor backbone_forward(const CdclModel& model, const Tensor& image);

struct LapGeometry {
  std::size_t kernel_h, kernel_w, stride_h, stride_w, out_h, out_w;
};
LapGeometry lap_geometry(std::size_t h_f, std::size_t w_f, std::size_t r);

Tensor gap(const Tensor& features);  // [d x h x w] -> [d]
Tensor lap(const Tensor& features, std::size_t r);

// Tokens are the grid cells of F_s in row-major order; output is their mean.
Tensor sbc_forward(const CdclModel& model, const Tensor& local_features);

struct AffOutput {
  Tensor weights;  // [2] = (w, w_s)
  Tensor logits;   // [C]
  Tensor probs;    // sigmoid(logits)
};

// `override_weights` replaces the learned fusion weights (path-equivalence checks).
AffOutput aff_forward(const CdclModel& model, const Tensor& global_feature, const Tensor& local_feature,
                      const std::optional<std::array<double, 2>>& override_weights = std::nullopt);

struct ForwardTrace {
  Tensor features;          // F [d x h_f x w_f]
  Tensor global_feature;    // F-bar [d]; undefined under no_gap
  Tensor local_features;    // F_s [d x h_s x w_s]; undefined under no_sbc
  Tensor local_feature;     // F_s-bar [d]; undefined under no_sbc
  double w = 0.0;
  double w_s = 0.0;
  Tensor logits;            // [C]
  Tensor probs;             // p = sigmoid(logits)
};

struct ForwardOptions {
  std::optional<std::array<double, 2>> fusion_override;
};

ForwardTrace forward(const CdclModel& model, const Tensor& image, const ForwardOptions& options = {});
// Everything after the backbone: pooling, SbC, fusion and the classifier
// heads applied to a feature map F [d x h_f x w_f].
ForwardTrace head_forward(const CdclModel& model, const Tensor& features, const ForwardOptions& options = {});

// Magic, format version, then one record per parameter:
// name, dtype tag (f64 little-endian), rank, extents, raw values.
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
// Overwrites the values of `params` in place; names, order and shapes must match.
void load_checkpoint(const std::filesystem::path& path, const ParamList& params);

}  // namespace cdcl
