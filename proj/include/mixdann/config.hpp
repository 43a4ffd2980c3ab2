#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mixdann/experiment.hpp"
#include "mixdann/synth.hpp"

namespace mixdann {

/// Everything a command can be configured with. Read from flat
/// `dotted.key = value` text; unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  BenchmarkConfig data;  // data.seed follows `seed`
  bool export_pgm = false;
  ExperimentConfig experiment;  // experiment.train holds the training setup
  int n_seeds = 1;              // experiment seeds are seed, seed+1, ...

  const TrainConfig& train() const { return experiment.train; }
  TrainConfig& train() { return experiment.train; }

  /// Copies `seed` into the dataset, training and experiment seeds.
  void apply_seed(std::uint64_t s);
};

using ConfigMap = std::map<std::string, std::string>;

/// key=value lines, '#' comments; duplicate keys are errors.
ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap read_config_file(const std::filesystem::path& path);

/// Applies every entry on top of the defaults; throws ConfigError naming the
/// key for unknown keys and malformed values.
RunConfig build_config(const ConfigMap& entries);

/// The resolved configuration as a complete key=value map.
ConfigMap config_snapshot(const RunConfig& cfg);
std::string format_config(const ConfigMap& entries);

}  // namespace mixdann
