#include "config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace cdcl::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::optional<T> parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end) return std::nullopt;
  return v;
}

template <typename T>
std::optional<std::vector<T>> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto v = parse_number<T>(trim(item));
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

template <typename T>
std::string fmt_list(const T& values) {
  std::string out;
  for (const auto& v : values) out += (out.empty() ? "" : ",") + fmt(v);
  return out;
}

// A setter returns an error description, or nothing on success.
using Setter = std::function<std::optional<std::string>(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Key {
  std::string name;
  Setter set;
  Getter get;
};

Key size_key(std::string name, std::function<std::size_t&(ExperimentConfig&)> field) {
  return {std::move(name),
          [field](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
            auto n = parse_number<std::size_t>(v);
            if (!n) return "expected a non-negative integer";
            field(c) = *n;
            return std::nullopt;
          },
          [field](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return fmt(field(copy));
          }};
}

Key real_key(std::string name, std::function<double&(ExperimentConfig&)> field) {
  return {std::move(name),
          [field](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
            auto n = parse_number<double>(v);
            if (!n) return "expected a real number";
            field(c) = *n;
            return std::nullopt;
          },
          [field](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return fmt(field(copy));
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(size_key("seed", [](ExperimentConfig& c) -> std::size_t& { return c.train.seed; }));
    k.push_back(size_key("n_seeds", [](ExperimentConfig& c) -> std::size_t& { return c.n_seeds; }));
    k.push_back({"variant",
                 [](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                   try {
                     c.train.variant = parse_variant(v);
                   } catch (const ContractError&) {
                     return "expected full, no_source, no_sbc or no_gap";
                   }
                   return std::nullopt;
                 },
                 [](const ExperimentConfig& c) { return std::string(to_string(c.train.variant)); }});
    k.push_back(size_key("batch_size", [](ExperimentConfig& c) -> std::size_t& { return c.train.batch_size; }));
    k.push_back(real_key("lambda", [](ExperimentConfig& c) -> double& { return c.train.lambda; }));
    k.push_back(real_key("base_lr", [](ExperimentConfig& c) -> double& { return c.train.base_lr; }));
    k.push_back(real_key("momentum", [](ExperimentConfig& c) -> double& { return c.train.momentum; }));
    k.push_back(real_key("weight_decay", [](ExperimentConfig& c) -> double& { return c.train.weight_decay; }));
    k.push_back(size_key("max_epochs", [](ExperimentConfig& c) -> std::size_t& { return c.train.max_epochs; }));
    k.push_back(
        size_key("validate_every", [](ExperimentConfig& c) -> std::size_t& { return c.train.validate_every; }));
    k.push_back(size_key("patience", [](ExperimentConfig& c) -> std::size_t& { return c.train.patience; }));
    k.push_back(real_key("source_fraction", [](ExperimentConfig& c) -> double& { return c.train.source_fraction; }));
    k.push_back(real_key("target_fraction", [](ExperimentConfig& c) -> double& { return c.train.target_fraction; }));

    k.push_back(
        size_key("model.num_classes", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.num_classes; }));
    k.push_back(
        size_key("model.in_channels", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.in_channels; }));
    k.push_back(size_key("model.input_height",
                         [](ExperimentConfig& c) -> std::size_t& { return c.train.model.input.height; }));
    k.push_back(
        size_key("model.input_width", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.input.width; }));
    k.push_back({"model.channels",
                 [](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                   auto list = parse_list<std::size_t>(v);
                   if (!list) return "expected a comma-separated list of non-negative integers";
                   c.train.model.channels = *list;
                   return std::nullopt;
                 },
                 [](const ExperimentConfig& c) { return fmt_list(c.train.model.channels); }});
    k.push_back(size_key("model.ratio", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.ratio; }));
    k.push_back(
        size_key("model.num_heads", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.num_heads; }));
    k.push_back(size_key("model.ffn_mult", [](ExperimentConfig& c) -> std::size_t& { return c.train.model.ffn_mult; }));

    k.push_back(size_key("synth.seed", [](ExperimentConfig& c) -> std::size_t& { return c.synth.seed; }));
    k.push_back(size_key("synth.num_classes", [](ExperimentConfig& c) -> std::size_t& { return c.synth.num_classes; }));
    k.push_back(
        size_key("synth.source_height", [](ExperimentConfig& c) -> std::size_t& { return c.synth.source_size.height; }));
    k.push_back(
        size_key("synth.source_width", [](ExperimentConfig& c) -> std::size_t& { return c.synth.source_size.width; }));
    k.push_back(
        size_key("synth.target_height", [](ExperimentConfig& c) -> std::size_t& { return c.synth.target_size.height; }));
    k.push_back(
        size_key("synth.target_width", [](ExperimentConfig& c) -> std::size_t& { return c.synth.target_size.width; }));
    k.push_back(
        real_key("synth.fov_ratio_source", [](ExperimentConfig& c) -> double& { return c.synth.fov_ratio_source; }));
    k.push_back(
        real_key("synth.fov_ratio_target", [](ExperimentConfig& c) -> double& { return c.synth.fov_ratio_target; }));
    k.push_back(
        real_key("synth.structure_scale", [](ExperimentConfig& c) -> double& { return c.synth.structure_scale; }));
    k.push_back(size_key("synth.lesions_per_class",
                         [](ExperimentConfig& c) -> std::size_t& { return c.synth.lesions_per_class; }));
    k.push_back({"synth.color_shift",
                 [](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                   auto list = parse_list<double>(v);
                   if (!list || list->size() != 3) return "expected three comma-separated reals";
                   std::copy(list->begin(), list->end(), c.synth.color_shift.begin());
                   return std::nullopt;
                 },
                 [](const ExperimentConfig& c) { return fmt_list(c.synth.color_shift); }});
    k.push_back(
        real_key("synth.class_probability", [](ExperimentConfig& c) -> double& { return c.synth.class_probability; }));
    k.push_back(real_key("synth.noise_sigma", [](ExperimentConfig& c) -> double& { return c.synth.noise_sigma; }));
    k.push_back(size_key("synth.source_train", [](ExperimentConfig& c) -> std::size_t& { return c.synth.source_train; }));
    k.push_back(size_key("synth.target_train", [](ExperimentConfig& c) -> std::size_t& { return c.synth.target_train; }));
    k.push_back(size_key("synth.target_val", [](ExperimentConfig& c) -> std::size_t& { return c.synth.target_val; }));
    k.push_back(size_key("synth.target_test", [](ExperimentConfig& c) -> std::size_t& { return c.synth.target_test; }));
    return k;
  }();
  return table;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error([&] {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        return msg;
      }()),
      errors_(std::move(errors)) {}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;

  ExperimentConfig cfg = base;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> seen;
  std::stringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (auto prev = seen.find(key); prev != seen.end()) {
      errors.push_back(where + "key '" + key + "' already set on line " + std::to_string(prev->second));
      continue;
    }
    seen[key] = lineno;
    if (auto err = it->second->set(cfg, value)) errors.push_back(where + key + ": " + *err + ", got '" + value + "'");
  }
  for (const auto& e : cfg.train.validate()) errors.push_back(e);
  for (const auto& e : cfg.synth.validate()) errors.push_back("synth: " + e);
  if (cfg.n_seeds == 0) errors.push_back("n_seeds must be >= 1");
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base);
}

std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace cdcl::cli
