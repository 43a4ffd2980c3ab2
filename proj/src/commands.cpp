#include "mixdann/commands.hpp"

#include <fstream>
#include <ostream>

#include "mixdann/errors.hpp"
#include "mixdann/manifest.hpp"

namespace mixdann {

namespace fs = std::filesystem;

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

RunManifest start_manifest(const std::string& command, const ConfigMap& config, std::vector<std::uint64_t> seeds) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seeds = std::move(seeds);
  m.started_utc = utc_now();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& out) {
  m.finished_utc = utc_now();
  write_manifest(out / "manifest.json", m);
}

std::string run_dir_name(const RunResult& r, const std::vector<std::string>& names) {
  return std::string(variant_name(r.variant)) + "_to_" + names[static_cast<std::size_t>(r.target)] + "_seed" +
         std::to_string(r.seed);
}

}  // namespace

int resolve_target(const std::vector<DomainDataset>& domains, const std::string& target) {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].spec.name == target) return static_cast<int>(i);
  }
  try {
    std::size_t pos = 0;
    const int idx = std::stoi(target, &pos);
    if (pos == target.size() && idx >= 0 && idx < static_cast<int>(domains.size())) return idx;
  } catch (const std::exception&) {
  }
  std::string names;
  for (const auto& d : domains) names += (names.empty() ? "" : ", ") + d.spec.name;
  throw ConfigError("unknown target domain '" + target + "' (available: " + names + ")");
}

void cmd_generate(const RunConfig& cfg, const fs::path& out) {
  make_dir(out);
  auto m = start_manifest("generate", config_snapshot(cfg), {cfg.data.seed});
  const auto domains = build_benchmark(cfg.data);
  write_dataset(out, domains, cfg.export_pgm);
  write_text(out / "config.txt", format_config(config_snapshot(cfg)));
  for (const auto& d : domains) m.add_output(out / d.spec.name);
  m.add_output(out / "index.csv");
  m.add_output(out / "domains.csv");
  finish_manifest(m, out);
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& data, const std::string& target, const fs::path& out) {
  const auto domains = read_dataset(data);
  const int t = resolve_target(domains, target);
  make_dir(out);
  auto m = start_manifest("train", config_snapshot(cfg), {cfg.train().seed});
  m.add_input(data);
  TrainResult result = train(cfg.train(), sources_without(domains, t));
  save_checkpoint(out, result.model);
  write_train_log_csv(out / "train_log.csv", result.log);
  write_text(out / "config.txt", format_config(config_snapshot(cfg)));
  m.add_output(out / "model.ckpt");
  m.add_output(out / "model.manifest.json");
  m.add_output(out / "train_log.csv");
  finish_manifest(m, out);
  return result;
}

MetricsReport cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const std::string& target,
                           const fs::path& out, const std::optional<fs::path>& baseline) {
  const ModelBundle model = load_checkpoint(checkpoint);
  const auto domains = read_dataset(data);
  const int t = resolve_target(domains, target);
  make_dir(out);
  auto m = start_manifest("evaluate", {{"target", domains[static_cast<std::size_t>(t)].spec.name}}, {});
  m.add_input(checkpoint);
  m.add_input(data);
  MetricsReport report = evaluate_domain(model, domains[static_cast<std::size_t>(t)]);
  if (baseline) {
    m.add_input(*baseline);
    attach_gain(report, read_metrics_avg(*baseline));
  }
  write_metrics_csv(out / "metrics.csv", report);
  write_metrics_json(out / "metrics.json", report);
  m.add_output(out / "metrics.csv");
  m.add_output(out / "metrics.json");
  finish_manifest(m, out);
  return report;
}

AblationResult cmd_experiment(const RunConfig& cfg, const fs::path& data, const fs::path& out, std::ostream* log) {
  const auto domains = read_dataset(data);
  make_dir(out);
  auto m = start_manifest("experiment", config_snapshot(cfg), cfg.experiment.seeds);
  m.add_input(data);
  ProgressFn progress;
  if (log) {
    progress = [&](const RunResult& r, std::size_t done, std::size_t total) {
      *log << "[" << done << "/" << total << "] " << variant_name(r.variant) << " -> "
           << domains[static_cast<std::size_t>(r.target)].spec.name << " seed " << r.seed
           << ": DSC " << r.report.avg.dsc << ", probe " << r.probe_accuracy << std::endl;
    };
  }
  AblationResult result = run_ablation(cfg.experiment, domains, progress);

  for (const auto& r : result.runs) {
    const fs::path dir = out / "runs" / run_dir_name(r, result.target_names);
    make_dir(dir);
    save_checkpoint(dir, r.trained.model);
    write_train_log_csv(dir / "train_log.csv", r.trained.log);
    write_metrics_csv(dir / "metrics.csv", r.report);
    write_metrics_json(dir / "metrics.json", r.report);
  }
  {
    std::ofstream txt(out / "table.txt");
    write_ablation_text(txt, result);
    if (!txt) throw DataError("cannot write table.txt");
  }
  write_ablation_csv(out / "table.csv", result);
  write_probe_json(out / "probe.json", result, cfg.experiment);
  write_text(out / "config.txt", format_config(config_snapshot(cfg)));
  m.add_output(out / "table.txt");
  m.add_output(out / "table.csv");
  m.add_output(out / "probe.json");
  for (const auto& r : result.runs) m.add_output(out / "runs" / run_dir_name(r, result.target_names) / "model.ckpt");
  finish_manifest(m, out);
  return result;
}

void cmd_export_features(const fs::path& checkpoint, const fs::path& data, const fs::path& out_csv,
                         const std::optional<std::string>& target) {
  const ModelBundle model = load_checkpoint(checkpoint);
  const auto domains = read_dataset(data);
  std::vector<FeatureRecord> records;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    if (target && resolve_target(domains, *target) != static_cast<int>(d)) continue;
    auto rec = export_features(model, domains[d].subjects);
    records.insert(records.end(), rec.begin(), rec.end());
  }
  if (out_csv.has_parent_path()) make_dir(out_csv.parent_path());
  write_features_csv(out_csv, records);
}

}  // namespace mixdann
