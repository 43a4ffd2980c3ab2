#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mixdann/metrics.hpp"
#include "mixdann/probe.hpp"
#include "mixdann/trainer.hpp"

namespace mixdann {

/// Sources for one held-out target, relabelled 0..k-2 in domain order.
std::vector<DomainDataset> sources_without(const std::vector<DomainDataset>& domains, int target);

/// Seed of the run that holds out `target`; shared by all variants so they
/// see the same initialisation and batch order.
std::uint64_t run_seed(std::uint64_t seed, int target);

/// Trains cfg.variant once per held-out target and evaluates it there.
std::vector<MetricsReport> leave_one_out(const TrainConfig& cfg, const std::vector<DomainDataset>& domains);

struct ExperimentConfig {
  TrainConfig train;  // variant and seed are set per run
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<std::uint64_t> seeds{0};
  ProbeConfig probe;
  int threads = 0;  // 0: hardware concurrency
};

struct RunResult {
  Variant variant = Variant::DeepAll;
  int target = 0;
  std::uint64_t seed = 0;
  MetricsReport report;
  double probe_accuracy = 0.0;
  TrainResult trained;
};

struct VariantRow {
  Variant variant = Variant::DeepAll;
  std::vector<MetricValues> per_target;  // averaged over seeds
  MetricValues avg;
  MetricValues gain;  // avg - DeepAll avg
  double probe_accuracy = 0.0;
};

struct AblationResult {
  std::vector<std::string> target_names;
  std::vector<RunResult> runs;  // variant-major, then target, then seed
  std::vector<VariantRow> rows;
};

using ProgressFn = std::function<void(const RunResult&, std::size_t done, std::size_t total)>;

/// Every variant x target x seed run, with per-target, avg and gain rows and
/// a source-feature domain probe per run.
AblationResult run_ablation(const ExperimentConfig& cfg, const std::vector<DomainDataset>& domains,
                            const ProgressFn& progress = {});

void write_ablation_text(std::ostream& out, const AblationResult& result);
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);
void write_probe_json(const std::filesystem::path& path, const AblationResult& result, const ExperimentConfig& cfg);

}  // namespace mixdann
