#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdcl/data.hpp"
#include "cdcl/train.hpp"

namespace cdcl::cli {

// Everything one invocation needs: how to synthesize data (when no dataset
// directory is given), how to train, and how many seeds the drivers run.
struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
  std::size_t n_seeds = 5;
};

// Raised with every problem found, one per line.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

// Flat `key = value` text. `#` starts a comment; blank lines are ignored.
// Unknown or repeated keys, malformed values and invalid resulting configs
// are all reported together.
ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = {});

// Every key with its value; parse_config(render_config(c)) reproduces c.
std::string render_config(const ExperimentConfig& cfg);

// Key names in rendering order.
std::vector<std::string> config_keys();

}  // namespace cdcl::cli
