#include "mixdann/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mixdann/errors.hpp"

namespace mixdann {

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  experiment.train.seed = s;
  experiment.probe.seed = s;
  experiment.seeds.clear();
  for (int i = 0; i < n_seeds; ++i) experiment.seeds.push_back(s + static_cast<std::uint64_t>(i));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return out;
}

int to_small_int(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -1000000000LL || x > 1000000000LL) throw ConfigError(key + ": out of range: '" + v + "'");
  return static_cast<int>(x);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not a seed: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

TaskLoss parse_task_loss(const std::string& key, const std::string& v) {
  if (v == "dice") return TaskLoss::Dice;
  if (v == "bce") return TaskLoss::BinaryCrossEntropy;
  throw ConfigError(key + ": expected dice or bce, got '" + v + "'");
}

std::vector<Variant> parse_variants(const std::string& v) {
  std::vector<Variant> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(trim(item)));
  if (out.empty()) throw ConfigError("experiment.variants: empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = to_seed(k, v); }},
      {"data.k_domains", [](RunConfig& c, auto& k, auto& v) { c.data.k_domains = to_small_int(k, v); }},
      {"data.n_per_domain", [](RunConfig& c, auto& k, auto& v) { c.data.n_per_domain = to_small_int(k, v); }},
      {"data.height", [](RunConfig& c, auto& k, auto& v) { c.data.height = to_small_int(k, v); }},
      {"data.width", [](RunConfig& c, auto& k, auto& v) { c.data.width = to_small_int(k, v); }},
      {"data.export_pgm", [](RunConfig& c, auto& k, auto& v) { c.export_pgm = to_bool(k, v); }},
      {"train.variant", [](RunConfig& c, auto&, auto& v) { c.train().variant = parse_variant(v); }},
      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train().lr = to_double(k, v); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train().epochs = to_small_int(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train().batch_size = to_small_int(k, v); }},
      {"train.val_fraction", [](RunConfig& c, auto& k, auto& v) { c.train().val_fraction = to_double(k, v); }},
      {"train.select_best", [](RunConfig& c, auto& k, auto& v) { c.train().select_best = to_bool(k, v); }},
      {"train.base_channels", [](RunConfig& c, auto& k, auto& v) { c.train().base_channels = to_small_int(k, v); }},
      {"train.task_loss", [](RunConfig& c, auto& k, auto& v) { c.train().task_loss = parse_task_loss(k, v); }},
      {"loss.dice_eps", [](RunConfig& c, auto& k, auto& v) { c.train().dice_eps = to_double(k, v); }},
      {"adam.beta1", [](RunConfig& c, auto& k, auto& v) { c.train().adam_beta1 = to_double(k, v); }},
      {"adam.beta2", [](RunConfig& c, auto& k, auto& v) { c.train().adam_beta2 = to_double(k, v); }},
      {"adam.eps", [](RunConfig& c, auto& k, auto& v) { c.train().adam_eps = to_double(k, v); }},
      {"mixup.alpha", [](RunConfig& c, auto& k, auto& v) { c.train().mixup.alpha = to_double(k, v); }},
      {"mixup.apply_prob", [](RunConfig& c, auto& k, auto& v) { c.train().mixup.apply_prob = to_double(k, v); }},
      {"mixup.mix_domain_labels",
       [](RunConfig& c, auto& k, auto& v) { c.train().mixup.mix_domain_labels = to_bool(k, v); }},
      {"dann.xi", [](RunConfig& c, auto& k, auto& v) { c.train().gamma.xi = to_double(k, v); }},
      {"dann.kappa", [](RunConfig& c, auto& k, auto& v) { c.train().gamma.kappa = to_double(k, v); }},
      {"dann.literal_gamma", [](RunConfig& c, auto& k, auto& v) { c.train().gamma.literal = to_bool(k, v); }},
      {"dann.gamma_override",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "none") c.train().gamma_override.reset();
         else c.train().gamma_override = to_double(k, v);
       }},
      {"augment.rotation", [](RunConfig& c, auto& k, auto& v) { c.train().augment.rotation = to_bool(k, v); }},
      {"augment.scale", [](RunConfig& c, auto& k, auto& v) { c.train().augment.scale = to_bool(k, v); }},
      {"augment.shear", [](RunConfig& c, auto& k, auto& v) { c.train().augment.shear = to_bool(k, v); }},
      {"augment.prob", [](RunConfig& c, auto& k, auto& v) { c.train().augment.prob = to_double(k, v); }},
      {"experiment.variants", [](RunConfig& c, auto&, auto& v) { c.experiment.variants = parse_variants(v); }},
      {"experiment.n_seeds", [](RunConfig& c, auto& k, auto& v) { c.n_seeds = to_small_int(k, v); }},
      {"experiment.threads", [](RunConfig& c, auto& k, auto& v) { c.experiment.threads = to_small_int(k, v); }},
      {"probe.folds", [](RunConfig& c, auto& k, auto& v) { c.experiment.probe.folds = to_small_int(k, v); }},
      {"probe.iterations",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.probe.iterations = to_small_int(k, v); }},
      {"probe.learning_rate",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.probe.learning_rate = to_double(k, v); }},
      {"probe.l2", [](RunConfig& c, auto& k, auto& v) { c.experiment.probe.l2 = to_double(k, v); }},
  };
  return table;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

RunConfig build_config(const ConfigMap& entries) {
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : entries) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
  if (cfg.data.k_domains < 3) throw ConfigError("data.k_domains must be >= 3");
  if (cfg.data.n_per_domain < 1) throw ConfigError("data.n_per_domain must be >= 1");
  if (cfg.data.height < 32 || cfg.data.width < 32) throw ConfigError("data.height and data.width must be >= 32");
  if (cfg.n_seeds < 1) throw ConfigError("experiment.n_seeds must be >= 1");
  if (cfg.experiment.threads < 0) throw ConfigError("experiment.threads must be >= 0");
  if (cfg.experiment.probe.folds < 2) throw ConfigError("probe.folds must be >= 2");
  cfg.apply_seed(cfg.seed);
  validate(cfg.train());
  return cfg;
}

ConfigMap config_snapshot(const RunConfig& c) {
  const TrainConfig& t = c.train();
  std::string variants;
  for (Variant v : c.experiment.variants) variants += (variants.empty() ? "" : ",") + std::string(variant_name(v));
  return {
      {"seed", std::to_string(c.seed)},
      {"data.k_domains", std::to_string(c.data.k_domains)},
      {"data.n_per_domain", std::to_string(c.data.n_per_domain)},
      {"data.height", std::to_string(c.data.height)},
      {"data.width", std::to_string(c.data.width)},
      {"data.export_pgm", fmt(c.export_pgm)},
      {"train.variant", variant_name(t.variant)},
      {"train.lr", fmt(t.lr)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.val_fraction", fmt(t.val_fraction)},
      {"train.select_best", fmt(t.select_best)},
      {"train.base_channels", std::to_string(t.base_channels)},
      {"train.task_loss", t.task_loss == TaskLoss::Dice ? "dice" : "bce"},
      {"loss.dice_eps", fmt(t.dice_eps)},
      {"adam.beta1", fmt(t.adam_beta1)},
      {"adam.beta2", fmt(t.adam_beta2)},
      {"adam.eps", fmt(t.adam_eps)},
      {"mixup.alpha", fmt(t.mixup.alpha)},
      {"mixup.apply_prob", fmt(t.mixup.apply_prob)},
      {"mixup.mix_domain_labels", fmt(t.mixup.mix_domain_labels)},
      {"dann.xi", fmt(t.gamma.xi)},
      {"dann.kappa", fmt(t.gamma.kappa)},
      {"dann.literal_gamma", fmt(t.gamma.literal)},
      {"dann.gamma_override", t.gamma_override ? fmt(*t.gamma_override) : "none"},
      {"augment.rotation", fmt(t.augment.rotation)},
      {"augment.scale", fmt(t.augment.scale)},
      {"augment.shear", fmt(t.augment.shear)},
      {"augment.prob", fmt(t.augment.prob)},
      {"experiment.variants", variants},
      {"experiment.n_seeds", std::to_string(c.n_seeds)},
      {"experiment.threads", std::to_string(c.experiment.threads)},
      {"probe.folds", std::to_string(c.experiment.probe.folds)},
      {"probe.iterations", std::to_string(c.experiment.probe.iterations)},
      {"probe.learning_rate", fmt(c.experiment.probe.learning_rate)},
      {"probe.l2", fmt(c.experiment.probe.l2)},
  };
}

std::string format_config(const ConfigMap& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

}  // namespace mixdann
