#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mixdann/config.hpp"
#include "mixdann/experiment.hpp"

namespace mixdann {

/// Index of a domain given as a number or by name (e.g. "D1").
int resolve_target(const std::vector<DomainDataset>& domains, const std::string& target);

/// Writes the benchmark dataset, config.txt and manifest.json into `out`.
void cmd_generate(const RunConfig& cfg, const std::filesystem::path& out);

/// Trains cfg.train().variant on every domain except `target`; writes the
/// checkpoint, train_log.csv, config.txt and manifest.json into `out`.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& data, const std::string& target,
                      const std::filesystem::path& out);

/// Evaluates a checkpoint on the target domain; writes metrics.csv and
/// metrics.json (with gains when a baseline metrics.json is given).
MetricsReport cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                           const std::string& target, const std::filesystem::path& out,
                           const std::optional<std::filesystem::path>& baseline = std::nullopt);

/// Full leave-one-out ablation: table.txt, table.csv, probe.json, one
/// directory per run under runs/, and manifest.json.
AblationResult cmd_experiment(const RunConfig& cfg, const std::filesystem::path& data,
                              const std::filesystem::path& out, std::ostream* log = nullptr);

/// Pooled extractor features of every subject (or only `target`'s) as CSV.
void cmd_export_features(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                         const std::filesystem::path& out_csv, const std::optional<std::string>& target = std::nullopt);

}  // namespace mixdann
