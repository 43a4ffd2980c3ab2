#include "mixdann/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mixdann/errors.hpp"

namespace mixdann {

std::vector<DomainDataset> sources_without(const std::vector<DomainDataset>& domains, int target) {
  if (target < 0 || target >= static_cast<int>(domains.size())) {
    throw ConfigError("target domain " + std::to_string(target) + " out of range (have " +
                      std::to_string(domains.size()) + " domains)");
  }
  std::vector<DomainDataset> out;
  for (int d = 0; d < static_cast<int>(domains.size()); ++d) {
    if (d != target) out.push_back(domains[static_cast<std::size_t>(d)]);
  }
  return out;
}

std::uint64_t run_seed(std::uint64_t seed, int target) {
  return mix_seed(seed, static_cast<std::uint64_t>(target));
}

namespace {

void check_domain_count(const TrainConfig& cfg, std::size_t k) {
  const std::size_t need = uses_domain_loss(cfg.variant) ? 3 : 2;
  if (k < need) {
    throw ConfigError(std::string("leave-one-out with ") + variant_name(cfg.variant) + " needs at least " +
                      std::to_string(need) + " domains, got " + std::to_string(k));
  }
}

RunResult run_one(const TrainConfig& base, Variant variant, int target, std::uint64_t seed,
                  const std::vector<DomainDataset>& domains, const ProbeConfig& probe_cfg) {
  TrainConfig cfg = base;
  cfg.variant = variant;
  cfg.seed = run_seed(seed, target);
  const auto sources = sources_without(domains, target);
  RunResult r;
  r.variant = variant;
  r.target = target;
  r.seed = seed;
  r.trained = train(cfg, sources);
  r.report = evaluate_domain(r.trained.model, domains[static_cast<std::size_t>(target)]);

  std::vector<FeatureRecord> records;
  for (const auto& s : sources) {
    auto rec = export_features(r.trained.model, s.subjects);
    records.insert(records.end(), rec.begin(), rec.end());
  }
  ProbeConfig pc = probe_cfg;
  pc.seed = cfg.seed;
  r.probe_accuracy = domain_probe_accuracy(records, pc);
  return r;
}

MetricValues nan_values() {
  const double n = std::numeric_limits<double>::quiet_NaN();
  return {n, n, n, n, n};
}

MetricValues difference(const MetricValues& a, const MetricValues& b) {
  return {a.dsc - b.dsc, a.h95 - b.h95, a.avd - b.avd, a.recall - b.recall, a.f1 - b.f1};
}

}  // namespace

std::vector<MetricsReport> leave_one_out(const TrainConfig& cfg, const std::vector<DomainDataset>& domains) {
  check_domain_count(cfg, domains.size());
  std::vector<MetricsReport> out;
  for (int t = 0; t < static_cast<int>(domains.size()); ++t) {
    TrainConfig c = cfg;
    c.seed = run_seed(cfg.seed, t);
    const TrainResult tr = train(c, sources_without(domains, t));
    out.push_back(evaluate_domain(tr.model, domains[static_cast<std::size_t>(t)]));
  }
  return out;
}

AblationResult run_ablation(const ExperimentConfig& cfg, const std::vector<DomainDataset>& domains,
                            const ProgressFn& progress) {
  if (cfg.variants.empty()) throw ConfigError("experiment: no variants");
  if (cfg.seeds.empty()) throw ConfigError("experiment: no seeds");
  for (Variant v : cfg.variants) {
    TrainConfig c = cfg.train;
    c.variant = v;
    check_domain_count(c, domains.size());
    validate(c);
  }
  const int k = static_cast<int>(domains.size());
  const std::size_t n_seeds = cfg.seeds.size();

  struct Job {
    Variant variant;
    int target;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Variant v : cfg.variants)
    for (int t = 0; t < k; ++t)
      for (std::uint64_t s : cfg.seeds) jobs.push_back({v, t, s});

  AblationResult result;
  for (const auto& d : domains) result.target_names.push_back(d.spec.name);
  result.runs.resize(jobs.size());

  unsigned threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::thread::hardware_concurrency();
  threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(jobs.size()));

  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        result.runs[i] = run_one(cfg.train, jobs[i].variant, jobs[i].target, jobs[i].seed, domains, cfg.probe);
        std::lock_guard<std::mutex> lock(mu);
        ++done;
        if (progress) progress(result.runs[i], done, jobs.size());
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  const VariantRow* baseline = nullptr;
  std::size_t job = 0;
  for (Variant v : cfg.variants) {
    VariantRow row;
    row.variant = v;
    double probe = 0.0;
    for (int t = 0; t < k; ++t) {
      std::vector<MetricValues> per_seed;
      for (std::size_t s = 0; s < n_seeds; ++s, ++job) {
        per_seed.push_back(result.runs[job].report.avg);
        probe += result.runs[job].probe_accuracy;
      }
      row.per_target.push_back(average(per_seed));
    }
    row.avg = average(row.per_target);
    row.probe_accuracy = probe / static_cast<double>(k * static_cast<int>(n_seeds));
    result.rows.push_back(std::move(row));
  }
  for (const auto& row : result.rows)
    if (row.variant == Variant::DeepAll) baseline = &row;
  for (auto& row : result.rows) row.gain = baseline ? difference(row.avg, baseline->avg) : nan_values();
  return result;
}

namespace {

std::string cell(double v, int precision) {
  if (std::isnan(v)) return "undefined";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

void write_ablation_text(std::ostream& out, const AblationResult& result) {
  std::vector<std::string> header{"Variant", "Metric"};
  for (const auto& t : result.target_names) header.push_back("->" + t);
  header.push_back("avg");
  header.push_back("gain");

  std::vector<std::vector<std::string>> lines{header};
  for (const auto& row : result.rows) {
    for (int m = 0; m < 5; ++m) {
      std::vector<std::string> line{m == 0 ? variant_name(row.variant) : "", kMetricNames[m]};
      const int prec = m == 0 || m >= 3 ? 3 : 2;
      for (const auto& t : row.per_target) line.push_back(cell(metric_value(t, m), prec));
      line.push_back(cell(metric_value(row.avg, m), prec));
      line.push_back(cell(metric_value(row.gain, m), prec));
      lines.push_back(std::move(line));
    }
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& l : lines)
    for (std::size_t c = 0; c < l.size(); ++c) width[c] = std::max(width[c], l[c].size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t c = 0; c < lines[i].size(); ++c) {
      out << (c == 0 ? "" : "  ") << (c < 2 ? std::left : std::right) << std::setw(static_cast<int>(width[c]))
          << lines[i][c];
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  out << std::right << "\nDomain probe accuracy on source features (chance = 1/"
      << (result.target_names.size() - 1) << "):\n";
  for (const auto& row : result.rows) {
    out << "  " << std::left << std::setw(8) << variant_name(row.variant) << std::right << ' '
        << cell(row.probe_accuracy, 3) << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "variant,metric";
  for (const auto& t : result.target_names) out << ",target_" << t;
  out << ",avg,gain\n";
  auto put = [&](double v) {
    if (std::isnan(v)) out << ",undefined";
    else out << ',' << v;
  };
  for (const auto& row : result.rows) {
    for (int m = 0; m < 5; ++m) {
      out << variant_name(row.variant) << ',' << kMetricNames[m];
      for (const auto& t : row.per_target) put(metric_value(t, m));
      put(metric_value(row.avg, m));
      put(metric_value(row.gain, m));
      out << '\n';
    }
  }
}

void write_probe_json(const std::filesystem::path& path, const AblationResult& result, const ExperimentConfig& cfg) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : result.rows) {
    arr.push_back({{"variant", variant_name(row.variant)},
                   {"accuracy", row.probe_accuracy},
                   {"k", result.target_names.size() - 1},
                   {"folds", cfg.probe.folds},
                   {"seed", cfg.seeds}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

}  // namespace mixdann
