#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mixdann/commands.hpp"
#include "mixdann/errors.hpp"

namespace fs = std::filesystem;
using namespace mixdann;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string target;
  std::string variant;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Common& c) {
  ConfigMap entries;
  if (!c.config.empty()) entries = read_config_file(c.config);
  if (!c.variant.empty()) entries["train.variant"] = c.variant;
  RunConfig cfg = build_config(entries);
  if (c.seed) cfg.apply_seed(*c.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixdann: domain-adversarial + mixup segmentation lab"};
  app.require_subcommand(1);
  Common c;
  std::string checkpoint, baseline;

  auto* gen = app.add_subcommand("generate", "write the synthetic multi-domain benchmark");
  gen->add_option("--config", c.config, "key=value config file");
  gen->add_option("--out", c.out, "output dataset directory")->required();
  gen->add_option("--seed", c.seed, "overrides `seed`");

  auto* tr = app.add_subcommand("train", "train one variant on all domains except the target");
  tr->add_option("--config", c.config, "key=value config file");
  tr->add_option("--data", c.data, "dataset directory")->required();
  tr->add_option("--target", c.target, "held-out domain (name or index)")->required();
  tr->add_option("--out", c.out, "run directory")->required();
  tr->add_option("--variant", c.variant, "DeepAll, DANN, Mixup or MixDANN");
  tr->add_option("--seed", c.seed, "overrides `seed`");

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on the target domain");
  ev->add_option("--checkpoint", checkpoint, "directory written by train")->required();
  ev->add_option("--data", c.data, "dataset directory")->required();
  ev->add_option("--target", c.target, "domain to evaluate (name or index)")->required();
  ev->add_option("--out", c.out, "report directory")->required();
  ev->add_option("--baseline", baseline, "metrics.json of a baseline, fills the gain fields");

  auto* ex = app.add_subcommand("experiment", "leave-one-domain-out ablation of all variants");
  ex->add_option("--config", c.config, "key=value config file");
  ex->add_option("--data", c.data, "dataset directory")->required();
  ex->add_option("--out", c.out, "experiment directory")->required();
  ex->add_option("--seed", c.seed, "overrides `seed`");

  auto* fx = app.add_subcommand("export-features", "pooled extractor features as CSV");
  fx->add_option("--checkpoint", checkpoint, "directory written by train")->required();
  fx->add_option("--data", c.data, "dataset directory")->required();
  fx->add_option("--out", c.out, "output CSV path")->required();
  fx->add_option("--target", c.target, "restrict to one domain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      cmd_generate(load(c), c.out);
      std::cout << "dataset written to " << c.out << '\n';
    } else if (*tr) {
      const auto result = cmd_train(load(c), c.data, c.target, c.out);
      const auto& best = result.log.epochs[static_cast<std::size_t>(result.log.best_epoch)];
      std::cout << "best epoch " << best.epoch << ", source-val DSC " << best.val_dsc << "; checkpoint in " << c.out
                << '\n';
    } else if (*ev) {
      std::optional<fs::path> base;
      if (!baseline.empty()) base = baseline;
      const auto report = cmd_evaluate(checkpoint, c.data, c.target, c.out, base);
      for (int m = 0; m < 5; ++m) std::cout << kMetricNames[m] << ' ' << metric_value(report.avg, m) << '\n';
    } else if (*ex) {
      const auto result = cmd_experiment(load(c), c.data, c.out, &std::cerr);
      write_ablation_text(std::cout, result);
    } else if (*fx) {
      std::optional<std::string> t;
      if (!c.target.empty()) t = c.target;
      cmd_export_features(checkpoint, c.data, c.out, t);
      std::cout << "features written to " << c.out << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
