#include "cdcl/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include "cdcl/mixup.hpp"
#include "cdcl/ops.hpp"
#include "cdcl/optim.hpp"
#include "cdcl/rng.hpp"

namespace cdcl {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_source: return "no_source";
    case Variant::no_sbc: return "no_sbc";
    case Variant::no_gap: return "no_gap";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_source") return Variant::no_source;
  if (s == "no_sbc") return Variant::no_sbc;
  if (s == "no_gap") return Variant::no_gap;
  throw ContractError("unknown variant '" + s + "' (expected full, no_source, no_sbc or no_gap)");
}

Ablation ablation_of(Variant v) {
  switch (v) {
    case Variant::no_sbc: return Ablation::no_sbc;
    case Variant::no_gap: return Ablation::no_gap;
    default: return Ablation::full;
  }
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::early_stop: return "early_stop";
    case StopReason::non_finite_loss: return "non_finite_loss";
  }
  return "?";
}

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors = model.validate();
  if (batch_size == 0) errors.push_back("batch_size must be >= 1");
  if (!(lambda > 0.0 && lambda < 1.0)) errors.push_back("lambda must lie in (0, 1)");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) errors.push_back("base_lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) errors.push_back("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) errors.push_back("weight_decay must be finite and >= 0");
  if (max_epochs == 0) errors.push_back("max_epochs must be >= 1");
  if (validate_every == 0 || validate_every > max_epochs) {
    errors.push_back("validate_every must lie in [1, max_epochs]");
  }
  if (patience == 0) errors.push_back("patience must be >= 1");
  if (!(source_fraction > 0.0 && source_fraction <= 1.0)) errors.push_back("source_fraction must lie in (0, 1]");
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) errors.push_back("target_fraction must lie in (0, 1]");
  return errors;
}

ModelConfig TrainConfig::resolved_model() const {
  ModelConfig m = model;
  m.ablation = ablation_of(variant);
  return m;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json model{
      {"num_classes", c.model.num_classes},
      {"in_channels", c.model.in_channels},
      {"input_height", c.model.input.height},
      {"input_width", c.model.input.width},
      {"channels", c.model.channels},
      {"ratio", c.model.ratio},
      {"num_heads", c.model.num_heads},
      {"ffn_mult", c.model.ffn_mult},
  };
  return {
      {"model", model},
      {"variant", to_string(c.variant)},
      {"batch_size", c.batch_size},
      {"lambda", c.lambda},
      {"base_lr", c.base_lr},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"max_epochs", c.max_epochs},
      {"validate_every", c.validate_every},
      {"patience", c.patience},
      {"seed", c.seed},
      {"source_fraction", c.source_fraction},
      {"target_fraction", c.target_fraction},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto& m = j.at("model");
  c.model.num_classes = m.at("num_classes").get<std::size_t>();
  c.model.in_channels = m.at("in_channels").get<std::size_t>();
  c.model.input = {m.at("input_height").get<std::size_t>(), m.at("input_width").get<std::size_t>()};
  c.model.channels = m.at("channels").get<std::vector<std::size_t>>();
  c.model.ratio = m.at("ratio").get<std::size_t>();
  c.model.num_heads = m.at("num_heads").get<std::size_t>();
  c.model.ffn_mult = m.at("ffn_mult").get<std::size_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.model.ablation = ablation_of(c.variant);
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.base_lr = j.at("base_lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.validate_every = j.at("validate_every").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.source_fraction = j.at("source_fraction").get<double>();
  c.target_fraction = j.at("target_fraction").get<double>();
  return c;
}

nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = "cdcl.run_record/1";
  j["config"] = to_json(r.config);
  j["seed"] = r.config.seed;
  j["epoch_losses"] = r.epoch_losses;
  j["val_maps"] = r.val_maps;
  j["val_epochs"] = r.val_epochs;
  j["best_map"] = r.best_map;
  j["best_epoch"] = r.best_epoch;
  j["stop_reason"] = to_string(r.stop_reason);
  j["checkpoint"] = r.checkpoint;
  j["test_map"] = r.test_map ? nlohmann::ordered_json(*r.test_map) : nlohmann::ordered_json(nullptr);
  return j;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ContractError("EarlyStopper: patience must be >= 1");
}

bool EarlyStopper::update(double metric) {
  improved_ = !has_best_ || metric > best_;
  if (improved_) {
    has_best_ = true;
    best_ = metric;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

ParamSnapshot snapshot(const ParamList& params) {
  ParamSnapshot out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(const ParamList& params, const ParamSnapshot& values) {
  if (values.size() != params.size()) throw ContractError("restore: snapshot does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor handle = params[i].tensor;
    auto dst = handle.mutable_values();
    if (dst.size() != values[i].size()) throw ContractError("restore: snapshot does not match " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::vector<std::vector<double>> predict(const CdclModel& model, const std::vector<Sample>& samples) {
  NoGradGuard guard;
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor p = forward(model, s.image).probs;
    out.emplace_back(p.values().begin(), p.values().end());
  }
  return out;
}

MetricsReport evaluate(const CdclModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("evaluate: empty split");
  const auto probs = predict(model, samples);
  const std::size_t c = model.config.num_classes;
  std::vector<RankedPredictions> per_class(c);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].labels.size() != c) throw DimensionError("evaluate: sample label width differs from the model");
    for (std::size_t k = 0; k < c; ++k) {
      per_class[k].scores.push_back(probs[i][k]);
      per_class[k].labels.push_back(samples[i].labels[k] >= 0.5 ? 1 : 0);
    }
  }
  return mean_average_precision(per_class);
}

nlohmann::ordered_json to_json(const MetricsReport& m) {
  nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
  for (const auto& ap : m.per_class_ap) {
    per_class.push_back(ap ? nlohmann::ordered_json(*ap) : nlohmann::ordered_json(nullptr));
  }
  return {{"schema", "cdcl.metrics/1"},
          {"map", m.map},
          {"n_samples", m.n_samples},
          {"per_class_ap", per_class},
          {"excluded_classes", m.excluded_classes}};
}

namespace {

constexpr std::uint64_t kBatchStream = 0xba7c4;
constexpr std::uint64_t kSourceSubsampleStream = 0x50c;
constexpr std::uint64_t kTargetSubsampleStream = 0x7a6;

Tensor batch_loss(const CdclModel& model, const Batch& batch) {
  std::vector<Tensor> rows;
  rows.reserve(batch.rows());
  const std::size_t c = model.config.num_classes;
  for (std::size_t i = 0; i < batch.rows(); ++i) rows.push_back(reshape(forward(model, batch.image(i)).logits, {1, c}));
  return bce_with_logits(concat(rows, 0), batch.labels);
}

}  // namespace

RunRecord train(CdclModel& model, const TwoDomainData& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  if (auto errors = cfg.validate(); !errors.empty()) throw ContractError("invalid TrainConfig: " + errors.front());
  const auto& pool = data.target.train;
  if (pool.empty()) throw ContractError("train: empty target training pool");
  if (data.target.val.empty()) throw ContractError("train: empty validation split");
  const bool use_source = cfg.variant != Variant::no_source;
  if (use_source && data.source.empty()) throw ContractError("train: empty source pool");
  if (model.config.ablation != ablation_of(cfg.variant)) {
    throw ContractError("train: model ablation does not match the variant");
  }

  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = cfg;
  rec.checkpoint = hooks.checkpoint.string();

  const ParamList params = model.params();
  const std::vector<Tensor> tensors = tensors_of(params);
  SgdState opt;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.base_lr = cfg.base_lr;

  const std::size_t b = cfg.batch_size;
  const std::size_t steps_per_epoch = (pool.size() + b - 1) / b;
  const CosineSchedule schedule{cfg.base_lr, cfg.max_epochs * steps_per_epoch, 0.0};

  Rng rng = derive_rng(cfg.seed, kBatchStream);
  EarlyStopper stopper(cfg.patience);
  std::optional<ParamSnapshot> best;
  std::size_t step = 0;

  auto finish = [&] {
    if (best) restore(params, *best);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  std::vector<std::size_t> order(pool.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);

    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<const Sample*> chunk;
      for (std::size_t i = s * b; i < std::min(order.size(), (s + 1) * b); ++i) chunk.push_back(&pool[order[i]]);
      // A short final chunk is topped up so every batch has b target rows.
      while (chunk.size() < b) chunk.push_back(&pool[uniform_index(rng, pool.size())]);

      Batch batch;
      if (use_source) {
        batch = assemble_batch(chunk, data.source, cfg.lambda, rng);
      } else {
        for (const Sample* extra : draw_targets(pool, b, rng)) chunk.push_back(extra);
        batch = assemble_target_batch(chunk);
      }

      const Tensor loss = batch_loss(model, batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        rec.stop_reason = StopReason::non_finite_loss;
        finish();
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(step) + "; parameters restored to the best validated state",
                            rec);
      }
      backward(loss);
      const double lr = cosine_lr(schedule, step);
      rec.learning_rates.push_back(lr);
      try {
        sgd_step(opt, tensors, lr);
      } catch (const NumericError& e) {
        rec.stop_reason = StopReason::non_finite_loss;
        finish();
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch), rec);
      }
      for (Tensor t : tensors) t.zero_grad();
      loss_sum += value;
      ++step;
    }
    const double epoch_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.epoch_losses.push_back(epoch_loss);

    std::optional<double> val_map;
    bool stop = false;
    if (epoch % cfg.validate_every == 0) {
      double m = evaluate(model, data.target.val).map;
      if (hooks.validation_override) m = hooks.validation_override(rec.val_maps.size(), m);
      val_map = m;
      rec.val_maps.push_back(m);
      rec.val_epochs.push_back(epoch);
      stop = stopper.update(m);
      if (stopper.improved()) {
        best = snapshot(params);
        rec.best_map = m;
        rec.best_epoch = epoch;
        if (!hooks.checkpoint.empty()) save_checkpoint(hooks.checkpoint, params);
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss, val_map);
    if (stop) {
      rec.stop_reason = StopReason::early_stop;
      break;
    }
  }
  finish();
  return rec;
}

// --- Drivers -----------------------------------------------------------------

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("summarize: no values");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

RunRecord run_once(const TwoDomainData& data, const TrainConfig& cfg, const std::filesystem::path& checkpoint) {
  if (auto errors = cfg.validate(); !errors.empty()) throw ContractError("invalid TrainConfig: " + errors.front());
  TwoDomainData d;
  d.target.val = data.target.val;
  d.target.train = subsample(data.target.train, cfg.target_fraction, splitmix64(cfg.seed ^ kTargetSubsampleStream));
  if (cfg.variant != Variant::no_source) {
    d.source = subsample(data.source, cfg.source_fraction, splitmix64(cfg.seed ^ kSourceSubsampleStream));
  }
  CdclModel model = CdclModel::create(cfg.resolved_model(), cfg.seed);
  TrainHooks hooks;
  hooks.checkpoint = checkpoint;
  RunRecord rec = train(model, d, cfg, hooks);
  rec.test_map = evaluate(model, data.target.test).map;
  return rec;
}

namespace {

struct Job {
  std::string tag;
  TrainConfig cfg;
};

std::vector<RunRecord> run_jobs(const TwoDomainData& data, const std::vector<Job>& jobs, const DriverOptions& opt) {
  std::vector<RunRecord> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        std::filesystem::path ckpt;
        if (opt.checkpoint_dir) ckpt = *opt.checkpoint_dir / (jobs[i].tag + ".ckpt");
        out[i] = run_once(data, jobs[i].cfg, ckpt);
        if (opt.on_run) {
          std::lock_guard lock(report);
          opt.on_run(jobs[i].tag, out[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opt.jobs, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Summary summarize_test(const std::vector<RunRecord>& runs) {
  std::vector<double> maps;
  for (const auto& r : runs) maps.push_back(r.test_map.value());
  return summarize(maps);
}

}  // namespace

std::vector<AblationRow> run_ablation_suite(const TwoDomainData& data, const TrainConfig& cfg,
                                            const DriverOptions& options, const std::vector<Variant>& variants) {
  if (options.n_seeds == 0) throw ContractError("run_ablation_suite: n_seeds must be >= 1");
  std::vector<Job> jobs;
  for (Variant v : variants) {
    for (std::size_t k = 0; k < options.n_seeds; ++k) {
      TrainConfig c = cfg;
      c.variant = v;
      c.seed = cfg.seed + k;
      jobs.push_back({std::string(to_string(v)) + "_seed" + std::to_string(c.seed), c});
    }
  }
  const auto records = run_jobs(data, jobs, options);
  std::vector<AblationRow> table;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRow row;
    row.variant = variants[i];
    row.runs.assign(records.begin() + static_cast<long>(i * options.n_seeds),
                    records.begin() + static_cast<long>((i + 1) * options.n_seeds));
    row.test_map = summarize_test(row.runs);
    table.push_back(std::move(row));
  }
  return table;
}

nlohmann::ordered_json to_json(const std::vector<AblationRow>& table) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : table) {
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    nlohmann::ordered_json maps = nlohmann::ordered_json::array();
    for (const auto& r : row.runs) {
      seeds.push_back(r.config.seed);
      maps.push_back(r.test_map.value());
    }
    rows.push_back({{"variant", to_string(row.variant)},
                    {"mean_test_map", row.test_map.mean},
                    {"std_test_map", row.test_map.std},
                    {"seeds", seeds},
                    {"test_maps", maps}});
  }
  return {{"schema", "cdcl.ablation/1"}, {"rows", rows}};
}

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::r: return "r";
    case SweepAxis::source_fraction: return "source_fraction";
    case SweepAxis::target_fraction: return "target_fraction";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "r") return SweepAxis::r;
  if (s == "source_fraction") return SweepAxis::source_fraction;
  if (s == "target_fraction") return SweepAxis::target_fraction;
  throw ContractError("unknown sweep axis '" + s + "' (expected r, source_fraction or target_fraction)");
}

std::vector<SweepPoint> run_sweep(const TwoDomainData& data, const TrainConfig& cfg, SweepAxis axis,
                                  const std::vector<double>& values, const DriverOptions& options) {
  if (values.empty()) throw ContractError("run_sweep: no values");
  if (options.n_seeds == 0) throw ContractError("run_sweep: n_seeds must be >= 1");
  std::vector<Job> jobs;
  for (double v : values) {
    for (std::size_t k = 0; k < options.n_seeds; ++k) {
      TrainConfig c = cfg;
      c.seed = cfg.seed + k;
      switch (axis) {
        case SweepAxis::r:
          if (!(v >= 1.0) || v != std::floor(v)) throw ContractError("run_sweep: r values must be integers >= 1");
          c.model.ratio = static_cast<std::size_t>(v);
          break;
        case SweepAxis::source_fraction: c.source_fraction = v; break;
        case SweepAxis::target_fraction: c.target_fraction = v; break;
      }
      if (auto errors = c.validate(); !errors.empty()) throw ContractError("run_sweep: " + errors.front());
      char tag[96];
      std::snprintf(tag, sizeof tag, "%s%g_seed%llu", to_string(axis), v, static_cast<unsigned long long>(c.seed));
      jobs.push_back({tag, c});
    }
  }
  const auto records = run_jobs(data, jobs, options);
  std::vector<SweepPoint> curve;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepPoint p;
    p.value = values[i];
    p.runs.assign(records.begin() + static_cast<long>(i * options.n_seeds),
                  records.begin() + static_cast<long>((i + 1) * options.n_seeds));
    p.test_map = summarize_test(p.runs);
    curve.push_back(std::move(p));
  }
  return curve;
}

nlohmann::ordered_json to_json(SweepAxis axis, const std::vector<SweepPoint>& curve) {
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (const auto& p : curve) {
    nlohmann::ordered_json maps = nlohmann::ordered_json::array();
    for (const auto& r : p.runs) maps.push_back(r.test_map.value());
    points.push_back({{"value", p.value}, {"mean_test_map", p.test_map.mean}, {"std_test_map", p.test_map.std},
                      {"test_maps", maps}});
  }
  return {{"schema", "cdcl.sweep/1"}, {"axis", to_string(axis)}, {"points", points}};
}

}  // namespace cdcl
