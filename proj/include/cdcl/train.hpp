#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cdcl/data.hpp"
#include "cdcl/errors.hpp"
#include "cdcl/metrics.hpp"
#include "cdcl/model.hpp"
#include "json.hpp"

namespace cdcl {

// Training variants: the three network ablations plus training without the
// source domain (mixup rows replaced by further target rows).
enum class Variant { full, no_source, no_sbc, no_gap };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
Ablation ablation_of(Variant v);

struct TrainConfig {
  ModelConfig model;
  Variant variant = Variant::full;
  std::size_t batch_size = 4;  // b
  double lambda = 0.7;
  double base_lr = 1e-3;
  double momentum = 0.95;
  double weight_decay = 1e-4;
  std::size_t max_epochs = 30;
  std::size_t validate_every = 1;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double source_fraction = 1.0;
  double target_fraction = 1.0;

  std::vector<std::string> validate() const;
  // Model config with the ablation implied by the variant.
  ModelConfig resolved_model() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class StopReason { max_epochs, early_stop, non_finite_loss };
const char* to_string(StopReason r);

struct RunRecord {
  TrainConfig config;
  std::vector<double> epoch_losses;
  std::vector<double> val_maps;          // one entry per validation
  std::vector<std::size_t> val_epochs;   // 1-based epoch of each validation
  double best_map = 0.0;
  std::size_t best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;
  std::string checkpoint;                // as passed in TrainHooks; empty if none
  std::optional<double> test_map;
  // Not serialized: wall-clock and per-step learning rates.
  double wall_seconds = 0.0;
  std::vector<double> learning_rates;
};

// Deterministic: identical runs serialize to identical text.
nlohmann::ordered_json to_json(const RunRecord& r);

// Raised when a batch loss is non-finite. Parameters were restored to the
// best validated state (or left untouched if none) before throwing.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, RunRecord partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

// Stops once `patience` consecutive updates fail to strictly improve on the best.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  // Returns true when training should stop after this validation.
  bool update(double metric);
  bool improved() const { return improved_; }
  std::optional<double> best() const { return has_best_ ? std::optional<double>(best_) : std::nullopt; }
  std::size_t stale() const { return stale_; }

 private:
  std::size_t patience_;
  bool has_best_ = false;
  double best_ = 0.0;
  std::size_t stale_ = 0;
  bool improved_ = false;
};

struct TrainHooks {
  // Best-so-far parameters are written here after every improvement.
  std::filesystem::path checkpoint;
  // Replaces the measured validation mAP (index is 0-based).
  std::function<double(std::size_t index, double measured)> validation_override;
  std::function<void(std::size_t epoch, double loss, std::optional<double> val_map)> on_epoch;
};

// Trains on data.target.train (+ data.source unless the variant drops it),
// validates on data.target.val. Sample fractions in `cfg` are applied by the
// drivers, not here. On return the model holds the best validated parameters.
RunRecord train(CdclModel& model, const TwoDomainData& data, const TrainConfig& cfg,
                const TrainHooks& hooks = {});

// Probabilities for every sample, no gradient recording. Rows follow `samples`.
std::vector<std::vector<double>> predict(const CdclModel& model, const std::vector<Sample>& samples);

MetricsReport evaluate(const CdclModel& model, const std::vector<Sample>& samples);

nlohmann::ordered_json to_json(const MetricsReport& m);

using ParamSnapshot = std::vector<std::vector<double>>;
ParamSnapshot snapshot(const ParamList& params);
void restore(const ParamList& params, const ParamSnapshot& values);

// --- Drivers -----------------------------------------------------------------

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};
Summary summarize(const std::vector<double>& values);

struct DriverOptions {
  std::size_t n_seeds = 5;
  std::size_t jobs = 1;
  // When set, each run's best checkpoint goes to dir/<tag>.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const std::string& tag, const RunRecord&)> on_run;
};

// One training plus test evaluation. Applies the config's sample fractions
// (seeded by cfg.seed) before training.
RunRecord run_once(const TwoDomainData& data, const TrainConfig& cfg, const std::filesystem::path& checkpoint = {});

struct AblationRow {
  Variant variant = Variant::full;
  std::vector<RunRecord> runs;  // seeds cfg.seed, cfg.seed + 1, ...
  Summary test_map;
};

std::vector<AblationRow> run_ablation_suite(const TwoDomainData& data, const TrainConfig& cfg,
                                            const DriverOptions& options = {},
                                            const std::vector<Variant>& variants = {Variant::full, Variant::no_source,
                                                                                    Variant::no_sbc, Variant::no_gap});
nlohmann::ordered_json to_json(const std::vector<AblationRow>& table);

enum class SweepAxis { r, source_fraction, target_fraction };
const char* to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepPoint {
  double value = 0.0;
  std::vector<RunRecord> runs;
  Summary test_map;
};

std::vector<SweepPoint> run_sweep(const TwoDomainData& data, const TrainConfig& cfg, SweepAxis axis,
                                  const std::vector<double>& values, const DriverOptions& options = {});
nlohmann::ordered_json to_json(SweepAxis axis, const std::vector<SweepPoint>& curve);

}  // namespace cdcl
