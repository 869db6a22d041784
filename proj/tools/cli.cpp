#include "cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "cdcl/data.hpp"
#include "cdcl/model.hpp"
#include "cdcl/train.hpp"
#include "config.hpp"

namespace cdcl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::size_t jobs = 1;
  std::string checkpoint;
  std::string split = "test";
  std::string axis;
  std::vector<double> values;
};

std::optional<std::uint64_t> resolve_seed(const Options& o) {
  const char* env = std::getenv("CDCL_SEED");
  if (env == nullptr || *env == '\0') return o.seed;
  std::uint64_t v = 0;
  const char* end = env + std::char_traits<char>::length(env);
  auto [p, ec] = std::from_chars(env, end, v);
  if (ec != std::errc{} || p != end) throw UsageError(std::string("CDCL_SEED must be a non-negative integer, got '") + env + "'");
  return v;
}

ExperimentConfig resolve_config(const Options& o) {
  return o.config.empty() ? parse_config("") : load_config(o.config);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text) || !f.flush()) throw IngestionError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path make_out_dir(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IngestionError("cannot create output directory " + out);
  return fs::path(out);
}

fs::path sidecar(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".conf"); }

// Target images are brought to the model input; source images are resized by
// the mixup step itself.
TwoDomainData obtain_data(const ExperimentConfig& cfg, const std::string& data_dir) {
  TwoDomainData d = data_dir.empty() ? synth_benchmark(cfg.synth) : load_dataset_dir(data_dir);
  const ModelConfig& m = cfg.train.model;
  auto check = [&](const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      if (s.labels.size() != m.num_classes) {
        throw ConfigError({"model.num_classes = " + std::to_string(m.num_classes) + " but sample '" + s.id + "' has " +
                           std::to_string(s.labels.size()) + " labels"});
      }
    }
  };
  auto conform = [&](std::vector<Sample>& samples) {
    check(samples);
    const Shape want{m.in_channels, m.input.height, m.input.width};
    for (auto& s : samples) {
      if (s.image.shape() != want) {
        s.image = align_channels(resize_keep_aspect(s.image, m.input.height, m.input.width), m.in_channels);
      }
    }
  };
  check(d.source);
  conform(d.target.train);
  conform(d.target.val);
  conform(d.target.test);
  return d;
}

json run_manifest(const std::string& command, const std::vector<std::string>& argv, const Options& o,
                  const ExperimentConfig& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds,
                  const json& artifacts) {
  json j;
  j["schema"] = "cdcl.run_manifest/1";
  j["command"] = command;
  j["argv"] = argv;
  j["config_path"] = o.config.empty() ? json(nullptr) : json(o.config);
  j["resolved_config"] = (out / "config.conf").string();
  json resolved = json::object();
  std::stringstream lines(render_config(cfg));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    resolved[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = resolved;
  j["data"] = o.data.empty() ? json("synthetic") : json(fs::absolute(o.data).string());
  j["seeds"] = seeds;
  j["output_dir"] = out.string();
  j["artifacts"] = artifacts;
  return j;
}

std::vector<std::uint64_t> seed_range(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < cfg.n_seeds; ++i) s.push_back(cfg.train.seed + i);
  return s;
}

DriverOptions driver_options(const ExperimentConfig& cfg, const Options& o, const fs::path& out,
                             std::ostream& err) {
  if (o.jobs == 0) throw UsageError("--jobs must be >= 1");
  DriverOptions d;
  d.n_seeds = cfg.n_seeds;
  d.jobs = o.jobs;
  d.checkpoint_dir = out / "checkpoints";
  std::error_code ec;
  fs::create_directories(*d.checkpoint_dir, ec);
  if (ec) throw IngestionError("cannot create " + d.checkpoint_dir->string());
  d.on_run = [&err](const std::string& tag, const RunRecord& r) {
    err << tag << ": test mAP " << *r.test_map << ", best val mAP " << r.best_map << " at epoch " << r.best_epoch
        << " (" << to_string(r.stop_reason) << ")\n";
  };
  return d;
}

void write_run_sidecars(const ExperimentConfig& cfg, const std::vector<RunRecord>& runs) {
  for (const auto& r : runs) {
    if (r.checkpoint.empty()) continue;
    ExperimentConfig c = cfg;
    c.train = r.config;
    c.n_seeds = 1;
    write_text(sidecar(r.checkpoint), render_config(c));
  }
}

int cmd_synth(const Options& o, const std::vector<std::string>& argv, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  if (auto s = resolve_seed(o)) cfg.synth.seed = *s;
  if (auto errors = cfg.synth.validate(); !errors.empty()) throw ConfigError(errors);
  const fs::path out = make_out_dir(o.out);
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  if (ec) throw IngestionError("cannot create " + (out / "images").string());

  const TwoDomainData data = synth_benchmark(cfg.synth);
  auto emit = [&](const std::vector<const std::vector<Sample>*>& parts, const std::string& name) {
    std::vector<Sample> rows;
    std::vector<std::string> paths;
    for (const auto* part : parts) {
      for (const auto& s : *part) {
        rows.push_back(s);
        paths.push_back("images/" + s.id + ".ppm");
      }
    }
    write_manifest(out / name, rows, paths);
  };
  for (const auto* part : {&data.source, &data.target.train, &data.target.val, &data.target.test}) {
    for (const auto& s : *part) write_pnm(out / "images" / (s.id + ".ppm"), s.image);
  }
  emit({&data.source, &data.target.train}, "train.csv");
  emit({&data.target.val}, "val.csv");
  emit({&data.target.test}, "test.csv");
  emit({&data.source, &data.target.train, &data.target.val, &data.target.test}, "manifest.csv");
  write_text(out / "config.conf", render_config(cfg));

  json artifacts;
  for (const char* name : {"train.csv", "val.csv", "test.csv", "manifest.csv"}) artifacts[name] = (out / name).string();
  artifacts["images"] = (out / "images").string();
  write_json(out / "run_manifest.json", run_manifest("synth", argv, o, cfg, out, {cfg.synth.seed}, artifacts));
  err << "wrote " << data.source.size() << " source and "
      << data.target.train.size() + data.target.val.size() + data.target.test.size() << " target samples to "
      << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& argv, std::ostream& out_stream, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  if (auto s = resolve_seed(o)) cfg.train.seed = *s;
  const fs::path out = make_out_dir(o.out);
  const TwoDomainData data = obtain_data(cfg, o.data);

  const fs::path ckpt = out / "best.ckpt";
  RunRecord rec = run_once(data, cfg.train, ckpt);
  write_text(sidecar(ckpt), render_config(cfg));
  write_text(out / "config.conf", render_config(cfg));
  write_json(out / "run_record.json", to_json(rec));

  CdclModel model = CdclModel::create(cfg.train.resolved_model(), cfg.train.seed);
  load_checkpoint(ckpt, model.params());
  write_json(out / "metrics_test.json", to_json(evaluate(model, data.target.test)));

  json artifacts;
  artifacts["checkpoint"] = ckpt.string();
  artifacts["checkpoint_config"] = sidecar(ckpt).string();
  artifacts["run_record"] = (out / "run_record.json").string();
  artifacts["metrics"] = (out / "metrics_test.json").string();
  write_json(out / "run_manifest.json", run_manifest("train", argv, o, cfg, out, {cfg.train.seed}, artifacts));
  err << "best val mAP " << rec.best_map << " at epoch " << rec.best_epoch << " (" << to_string(rec.stop_reason)
      << ")\n";
  out_stream << "test mAP " << *rec.test_map << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out_stream) {
  const fs::path ckpt(o.checkpoint);
  if (!fs::exists(ckpt)) throw IngestionError("missing checkpoint " + ckpt.string());
  const fs::path conf = o.config.empty() ? sidecar(ckpt) : fs::path(o.config);
  if (!fs::exists(conf)) throw IngestionError("missing checkpoint config " + conf.string());
  const ExperimentConfig cfg = load_config(conf);
  if (o.split != "val" && o.split != "test") throw UsageError("--split must be val or test, got '" + o.split + "'");

  const TwoDomainData data = obtain_data(cfg, o.data);
  CdclModel model = CdclModel::create(cfg.train.resolved_model(), cfg.train.seed);
  load_checkpoint(ckpt, model.params());
  const json report = to_json(evaluate(model, o.split == "val" ? data.target.val : data.target.test));
  out_stream << report.dump(2) << "\n";
  if (!o.out.empty()) write_json(o.out, report);
  return kExitOk;
}

int cmd_ablate(const Options& o, const std::vector<std::string>& argv, std::ostream& out_stream, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  if (auto s = resolve_seed(o)) cfg.train.seed = *s;
  const fs::path out = make_out_dir(o.out);
  const TwoDomainData data = obtain_data(cfg, o.data);

  const auto table = run_ablation_suite(data, cfg.train, driver_options(cfg, o, out, err));
  for (const auto& row : table) write_run_sidecars(cfg, row.runs);
  write_json(out / "ablation.json", to_json(table));
  write_text(out / "config.conf", render_config(cfg));
  json artifacts;
  artifacts["table"] = (out / "ablation.json").string();
  artifacts["checkpoints"] = (out / "checkpoints").string();
  write_json(out / "run_manifest.json", run_manifest("ablate", argv, o, cfg, out, seed_range(cfg), artifacts));
  for (const auto& row : table) {
    out_stream << to_string(row.variant) << " test mAP " << row.test_map.mean << " +- " << row.test_map.std << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const Options& o, const std::vector<std::string>& argv, std::ostream& out_stream, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  if (auto s = resolve_seed(o)) cfg.train.seed = *s;
  const SweepAxis axis = parse_sweep_axis(o.axis);
  const fs::path out = make_out_dir(o.out);
  const TwoDomainData data = obtain_data(cfg, o.data);

  const auto curve = run_sweep(data, cfg.train, axis, o.values, driver_options(cfg, o, out, err));
  for (const auto& p : curve) write_run_sidecars(cfg, p.runs);
  write_json(out / "sweep.json", to_json(axis, curve));
  write_text(out / "config.conf", render_config(cfg));
  json artifacts;
  artifacts["curve"] = (out / "sweep.json").string();
  artifacts["checkpoints"] = (out / "checkpoints").string();
  write_json(out / "run_manifest.json", run_manifest("sweep", argv, o, cfg, out, seed_range(cfg), artifacts));
  for (const auto& p : curve) {
    out_stream << to_string(axis) << " = " << p.value << " test mAP " << p.test_map.mean << " +- " << p.test_map.std
               << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-domain collaborative learning: synthesis, training, evaluation, ablations, sweeps", "cdcl"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", o.config, "key = value config file"); };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "base seed (CDCL_SEED overrides)");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset directory with train/val/test.csv (default: synthesize)");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic two-domain dataset");
  add_config(synth);
  add_seed(synth);
  synth->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train one model and evaluate it on the test split");
  add_config(train);
  add_seed(train);
  add_data(train);
  train->add_option("--out", o.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; prints the metrics report as JSON");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--config", o.config, "config (default: <checkpoint>.conf)");
  add_data(eval);
  eval->add_option("--split", o.split, "val or test");
  eval->add_option("--out", o.out, "also write the report to this file");

  auto* ablate = app.add_subcommand("ablate", "run all four variants over n_seeds seeds");
  add_config(ablate);
  add_seed(ablate);
  add_data(ablate);
  ablate->add_option("--out", o.out, "output directory")->required();
  ablate->add_option("--jobs", o.jobs, "concurrent trainings");

  auto* sweep = app.add_subcommand("sweep", "vary one setting over n_seeds seeds");
  add_config(sweep);
  add_seed(sweep);
  add_data(sweep);
  sweep->add_option("--axis", o.axis, "r, source_fraction or target_fraction")->required();
  sweep->add_option("--values", o.values, "comma-separated values")->required()->delimiter(',');
  sweep->add_option("--out", o.out, "output directory")->required();
  sweep->add_option("--jobs", o.jobs, "concurrent trainings");

  std::vector<std::string> argv{"cdcl"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<char*> cargv;
  for (auto& a : argv) cargv.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, args, err);
    if (train->parsed()) return cmd_train(o, args, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (ablate->parsed()) return cmd_ablate(o, args, out, err);
    if (sweep->parsed()) return cmd_sweep(o, args, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cdcl::cli
