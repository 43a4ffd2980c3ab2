// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Criteria 6 and 7 share one full-size ablation and take
// most of the runtime.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "mixdann/commands.hpp"
#include "mixdann/experiment.hpp"
#include "mixdann/gradcheck.hpp"
#include "mixdann/layers.hpp"
#include "mixdann/manifest.hpp"
#include "mixdann/metrics.hpp"
#include "mixdann/mixup.hpp"
#include "mixdann/models.hpp"
#include "mixdann/trainer.hpp"
#include "oracles.hpp"
#include "stats_util.hpp"
#include "test_util.hpp"

using namespace mixdann;
using namespace mixdann::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1

Outcome gradient_checks() {
  constexpr double kTol = 1e-4;
  constexpr int kPoints = 10;
  Rng wr(101);
  std::map<std::string, double> worst;

  const Tensor wc1 = random_tensor({2, 3, 5, 5}, wr), wc2 = random_tensor({2, 3, 3, 3}, wr);
  worst["conv s1"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(conv2d(v[0], v[1], v[2], 1, 1), wc1); },
                                      {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}, kPoints, 1);
  worst["conv s2"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(conv2d(v[0], v[1], v[2], 2, 1), wc2); },
                                      {{2, 2, 6, 6}, {3, 2, 3, 3}, {3}}, kPoints, 2);
  const Tensor wp = random_tensor({2, 2, 2, 2}, wr);
  worst["maxpool"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(maxpool2(v[0]), wp); },
                                      {{2, 2, 4, 4}}, kPoints, 3);
  const Tensor wu = random_tensor({1, 2, 6, 4}, wr);
  worst["upsample"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(upsample2_nearest(v[0]), wu); },
                                       {{1, 2, 3, 2}}, kPoints, 4);
  const Tensor wcat = random_tensor({2, 5, 3, 3}, wr);
  worst["concat"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(concat_channels(v[0], v[1]), wcat); },
                                     {{2, 2, 3, 3}, {2, 3, 3, 3}}, kPoints, 5);
  const Tensor wd = random_tensor({3, 4}, wr);
  worst["dense"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(dense(v[0], v[1], v[2]), wd); },
                                    {{3, 5}, {4, 5}, {4}}, kPoints, 6);
  const Tensor wa = random_tensor({3, 4}, wr);
  worst["relu"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(relu(v[0]), wa); }, {{3, 4}}, kPoints, 7);
  worst["sigmoid"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(sigmoid(v[0]), wa); }, {{3, 4}},
                                      kPoints, 8, -5, 5);
  worst["softmax"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(softmax(v[0]), wa); }, {{3, 4}},
                                      kPoints, 9, -3, 3);

  Rng lr(102);
  Tensor target({2, 1, 3, 3});
  for (auto& v : target.data()) v = lr.bernoulli(0.5) ? 1.0 : 0.0;
  worst["dice loss"] = worst_grad_error([&](Tape&, const std::vector<Var>& v) { return soft_dice_loss(sigmoid(v[0]), target); },
                                        {{2, 1, 3, 3}}, kPoints, 10, -2, 2);
  const std::vector<double> item_w{0.6, 0.4};
  worst["bce loss"] = worst_grad_error(
      [&](Tape&, const std::vector<Var>& v) { return weighted_sum(bce_per_item(sigmoid(v[0]), target), item_w); },
      {{2, 1, 3, 3}}, kPoints, 11, -2, 2);
  const std::vector<int> labels{0, 2, 1, 2};
  worst["domain CE loss"] = worst_grad_error(
      [&](Tape&, const std::vector<Var>& v) { return softmax_cross_entropy(v[0], labels); }, {{4, 3}}, kPoints, 12, -3, 3);

  // Full graph: U-Net + discriminator behind the reversal layer, task plus
  // domain loss. Theta sees task - gamma * domain, sigma task, mu domain.
  double full = 0.0;
  {
    ModelConfig mc;
    mc.height = mc.width = 16;
    mc.base_channels = 2;
    mc.num_domains = 3;
    mc.disc_channels = 4;
    mc.disc_hidden = 5;
    const double gamma = 0.3;
    const std::vector<int> dom_labels{0, 2};
    const char* names[] = {"enc1a.weight", "enc2b.bias", "mid.weight", "head.weight", "disc.conv1.weight", "disc.fc3.weight"};
    for (int point = 0; point < kPoints; ++point) {
      ModelBundle m = init_params(mc, 1000 + static_cast<std::uint64_t>(point));
      Rng rng(2000 + static_cast<std::uint64_t>(point));
      for (auto& p : m.params)
        if (p.name.ends_with(".bias"))
          for (auto& v : p.value.data()) v = rng.uniform(-0.1, 0.1);
      const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0, 1);
      Tensor t({2, 1, 16, 16});
      for (auto& v : t.data()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
      auto parts = [&](ModelBundle& mb, Tape& tape) {
        const UNetOutput out = unet_forward(tape, mb, tape.constant(x));
        return std::pair{soft_dice_loss(out.mask_prob, t),
                         softmax_cross_entropy(discriminate(tape, mb, out.features, {gamma}), dom_labels)};
      };
      m.zero_grads();
      {
        Tape tape;
        const auto [task, dom] = parts(m, tape);
        tape.backward(add(task, dom));
      }
      for (const char* name : names) {
        const Parameter& p = m.find(name);
        const Role role = p.role;
        auto f = [&](const Tensor& v) {
          ModelBundle c = m;
          const_cast<Parameter&>(c.find(name)).value = v;
          Tape tape;
          const auto [task, dom] = parts(c, tape);
          const double a = task.value().item(), b = dom.value().item();
          return role == Role::Theta ? a - gamma * b : role == Role::Sigma ? a : b;
        };
        full = std::max(full, relative_error(p.grad, finite_difference_grad(f, p.value, 1e-6)));
      }
    }
  }
  worst["full graph"] = full;

  // Exact reversal: through the GRL the gradient is -gamma times the
  // gradient of the same graph without it, bit for bit.
  bool exact = true;
  {
    Rng rng(103);
    const Tensor x0 = random_tensor({2, 1, 6, 6}, rng);
    const Tensor k = random_tensor({3, 1, 3, 3}, rng), b = random_tensor({3}, rng), w = random_tensor({2, 3, 3, 3}, rng);
    for (double gamma : {0.0, 0.05, 0.09051, 0.3, 1.0, 2.0}) {
      auto run = [&](bool reverse) {
        Tape tape;
        const Var x = tape.input(x0);
        const Var y = relu(conv2d(reverse ? grl(x, {gamma}) : x, tape.constant(k), tape.constant(b), 2, 1));
        tape.backward(contract(y, w));
        return tape.grad(x);
      };
      const Tensor id = run(false), rev = run(true);
      for (std::size_t i = 0; i < id.size(); ++i) exact = exact && rev[i] == -gamma * id[i];
    }
  }

  double max_err = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : worst)
    if (err >= max_err) {
      max_err = err;
      worst_name = name;
    }
  return {max_err < kTol && exact, std::to_string(worst.size()) + " checks, worst rel err " + num(max_err, 3) + " (" +
                                       worst_name + "), GRL exact " + (exact ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 2

Outcome metric_oracles() {
  Rng rng(201);
  int h95_pairs = 0, h95_bad = 0;
  while (h95_pairs < 200) {
    const std::size_t h = 2 + rng.index(31), w = 2 + rng.index(31);
    const bool blobs = h95_pairs % 2 == 0;
    const BinaryMask a = blobs ? random_blobs(rng, h, w) : random_mask(rng, h, w, rng.uniform(0.02, 0.6));
    const BinaryMask b = blobs ? random_blobs(rng, h, w) : random_mask(rng, h, w, rng.uniform(0.02, 0.6));
    if (a.empty() || b.empty()) continue;
    ++h95_pairs;
    if (*h95(a, b) != brute_h95(a, b)) ++h95_bad;
  }
  int cc_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t h = 1 + rng.index(64), w = 1 + rng.index(64);
    const BinaryMask m = random_mask(rng, h, w, rng.uniform(0.05, 0.6));
    if (connected_components(m).count != flood_fill_count(m)) ++cc_bad;
  }

  int fixtures = 0, fixture_bad = 0;
  auto fixture = [&](bool ok) {
    ++fixtures;
    if (!ok) ++fixture_bad;
  };
  // |y| = 4, |yhat| = 6, overlap 3
  const BinaryMask y4 = from_rows({"####", "....", "...."});
  const BinaryMask p6 = from_rows({"###.", "###.", "...."});
  fixture(std::abs(dsc(y4, p6) - 0.6) < 1e-15);
  fixture(dsc(y4, y4) == 1.0);
  fixture(std::abs(*avd(y4, p6) - 50.0) < 1e-12);
  fixture(!avd(BinaryMask(3, 4), p6).has_value());
  const BinaryMask ly = from_rows({"#.#.#", ".....", "....."});
  const BinaryMask lp = from_rows({"#.#..", ".....", "...##"});
  const LesionScores s = lesion_recall_f1(ly, lp);
  fixture(s.match.tp == 2 && s.match.fp == 1 && s.match.fn == 1);
  fixture(std::abs(s.recall - 2.0 / 3.0) < 1e-15 && std::abs(s.f1 - 2.0 / 3.0) < 1e-15);
  const BinaryMask single_a = from_rows({"#....", ".....", "....."}), single_b = from_rows({".....", ".....", "....#"});
  fixture(*h95(single_a, single_b) == std::sqrt(2.0 * 2.0 + 4.0 * 4.0));
  fixture(!h95(BinaryMask(3, 5), single_a).has_value());

  const bool pass = h95_bad == 0 && cc_bad == 0 && fixture_bad == 0;
  return {pass, "h95 " + std::to_string(h95_pairs - h95_bad) + "/" + std::to_string(h95_pairs) + " exact, components " +
                    std::to_string(200 - cc_bad) + "/200 exact, fixtures " + std::to_string(fixtures - fixture_bad) + "/" +
                    std::to_string(fixtures)};
}

// ---------------------------------------------------------------- 3

Outcome beta_statistics() {
  constexpr int kDraws = 100000;
  Rng rng(301);
  std::vector<double> b07(kDraws), b1(kDraws);
  for (auto& v : b07) v = sample_beta(0.7, rng);
  for (auto& v : b1) v = sample_beta(1.0, rng);
  const double mean = mean_of(b07), var = variance_of(b07);
  const double ks = ks_one_sample(b1, [](double x) { return std::clamp(x, 0.0, 1.0); });
  const double crit = ks_critical_one(b1.size());
  const bool pass = std::abs(mean - 0.5) <= 0.01 && std::abs(var - 0.1042) <= 0.005 && ks < crit;
  return {pass, "Beta(0.7,0.7) mean " + num(mean, 5) + " var " + num(var, 5) + "; Beta(1,1) KS D=" + num(ks, 4) +
                    " vs critical " + num(crit, 4)};
}

// ---------------------------------------------------------------- 4

Outcome gamma_schedule() {
  GammaSchedule sched;
  sched.max_epoch = 60;
  const double at0 = gamma_at(sched, 0);
  const double end = gamma_at(sched, sched.max_epoch);
  const double expect = 0.1 * (2.0 / (1.0 + std::exp(-3.0)) - 1.0);
  bool monotone = true;
  double prev = at0;
  for (int e = 1; e <= sched.max_epoch; ++e) {
    const double g = gamma_at(sched, e);
    monotone = monotone && g >= prev;
    prev = g;
  }
  const bool pass = at0 == 0.0 && std::abs(end - expect) <= 1e-9 && std::abs(end - 0.09051) < 1e-5 && monotone;
  return {pass, "gamma(0)=" + num(at0) + ", gamma(max)=" + num(end, 10) + ", monotone " + (monotone ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 5

using Trajectory = std::vector<std::vector<Tensor>>;

// Theta and sigma values after every task update.
Trajectory trajectory(const TrainConfig& cfg, const std::vector<DomainDataset>& sources) {
  Trajectory out;
  train(cfg, sources, [&](const StepEvent& ev) {
    if (ev.kind != UpdateKind::Task) return;
    std::vector<Tensor> snap;
    for (const auto& p : ev.model->params)
      if (p.role != Role::Mu) snap.push_back(p.value);
    out.push_back(std::move(snap));
  });
  return out;
}

Outcome variant_collapse() {
  BenchmarkConfig bc;
  bc.n_per_domain = 12;
  const auto all = build_benchmark(bc);
  const std::vector<DomainDataset> src = sources_without(all, 2);
  TrainConfig base;
  base.epochs = 2;
  base.seed = 501;

  TrainConfig deep = base, mixup = base, md_plain = base, md_zero = base;
  deep.variant = Variant::DeepAll;
  mixup.variant = Variant::Mixup;
  md_plain.variant = md_zero.variant = Variant::MixDANN;
  md_plain.gamma_override = md_zero.gamma_override = 0.0;
  md_plain.mixup.apply_prob = 0.0;

  const Trajectory t_deep = trajectory(deep, src), t_plain = trajectory(md_plain, src);
  const Trajectory t_mixup = trajectory(mixup, src), t_zero = trajectory(md_zero, src);
  const bool a = !t_deep.empty() && t_deep == t_plain;
  const bool b = !t_mixup.empty() && t_mixup == t_zero;
  return {a && b, std::to_string(t_deep.size()) + " steps; MixDANN(gamma=0,p=0)==DeepAll " + (a ? "yes" : "NO") +
                      ", MixDANN(gamma=0)==Mixup " + (b ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 6, 7

double avg_dsc(const AblationResult& r, Variant v) {
  for (const auto& row : r.rows)
    if (row.variant == v) return row.avg.dsc;
  return std::nan("");
}

double avg_probe(const AblationResult& r, Variant v) {
  for (const auto& row : r.rows)
    if (row.variant == v) return row.probe_accuracy;
  return std::nan("");
}

AblationResult desk_ablation(const fs::path& workdir, int threads) {
  ExperimentConfig cfg;
  cfg.seeds = {0, 1, 2};
  cfg.threads = threads;
  const auto domains = build_benchmark(BenchmarkConfig{});
  const auto start = std::chrono::steady_clock::now();
  AblationResult r = run_ablation(cfg, domains, [&](const RunResult& run, std::size_t done, std::size_t total) {
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    std::cerr << "  [" << done << "/" << total << "] " << variant_name(run.variant) << " -> "
              << domains[static_cast<std::size_t>(run.target)].spec.name << " seed " << run.seed << ": DSC " << num(run.report.avg.dsc) << ", probe "
              << num(run.probe_accuracy) << " (" << num(mins, 3) << " min)\n";
  });
  fs::create_directories(workdir);
  std::ofstream table(workdir / "ablation.txt");
  write_ablation_text(table, r);
  write_ablation_csv(workdir / "ablation.csv", r);
  write_probe_json(workdir / "probe.json", r, cfg);
  return r;
}

Outcome dg_effect(const AblationResult& r) {
  const double deep = avg_dsc(r, Variant::DeepAll), dann = avg_dsc(r, Variant::DANN);
  const double mix = avg_dsc(r, Variant::Mixup), md = avg_dsc(r, Variant::MixDANN);
  const bool pass = md >= deep + 0.05 && md >= dann - 0.02 && md >= mix - 0.02;
  return {pass, "target DSC DeepAll " + num(deep) + ", DANN " + num(dann) + ", Mixup " + num(mix) + ", MixDANN " + num(md) +
                    " (need MixDANN >= DeepAll+0.05 and >= DANN,Mixup-0.02)"};
}

Outcome probe_gap(const AblationResult& r) {
  const double deep = avg_probe(r, Variant::DeepAll), md = avg_probe(r, Variant::MixDANN);
  return {md <= deep - 0.10, "probe accuracy DeepAll " + num(deep) + ", MixDANN " + num(md) + ", DANN " +
                                 num(avg_probe(r, Variant::DANN)) + ", Mixup " + num(avg_probe(r, Variant::Mixup)) +
                                 " (need MixDANN <= DeepAll-0.10)"};
}

// ---------------------------------------------------------------- 8

std::map<std::string, std::string> artefact_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const char* f : {"table.txt", "table.csv", "probe.json"}) out[f] = sha256_file(dir / f);
  for (const auto& e : fs::directory_iterator(dir / "runs"))
    out[e.path().filename().string() + "/model.ckpt"] = sha256_file(e.path() / "model.ckpt");
  return out;
}

Outcome reproducibility(const fs::path& workdir) {
  RunConfig c = build_config(parse_config_text(
      "seed = 7\ndata.n_per_domain = 10\ndata.height = 32\ndata.width = 32\ntrain.epochs = 2\n"
      "experiment.n_seeds = 2\nprobe.folds = 3\n"));
  const fs::path data = workdir / "repro_data", a = workdir / "repro_a", b = workdir / "repro_b";
  for (const auto& p : {data, a, b}) fs::remove_all(p);
  cmd_generate(c, data);
  cmd_experiment(c, data, a);
  cmd_experiment(c, data, b);
  const auto ha = artefact_hashes(a), hb = artefact_hashes(b);
  std::size_t ckpts = 0;
  for (const auto& [k, v] : ha) ckpts += k.ends_with(".ckpt");
  const bool pass = ha == hb && ckpts == 24;
  return {pass, std::to_string(ha.size()) + " artefacts (" + std::to_string(ckpts) + " checkpoints) " +
                    (ha == hb ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::set<int> only;
  fs::path workdir = fs::temp_directory_path() / "mixdann_acceptance";
  int threads = 0;
  app.add_option("--only", only, "run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "where experiment outputs are written");
  app.add_option("--threads", threads, "ablation worker threads (0: all cores)");
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::string> titles = {
      {1, "gradient correctness"}, {2, "metric oracle equivalence"}, {3, "mixup sampler statistics"},
      {4, "gamma schedule"},       {5, "variant-collapse identities"}, {6, "desk-scale DG effect"},
      {7, "invariance probe"},     {8, "reproducibility"}};
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  std::optional<AblationResult> ablation;
  auto get_ablation = [&]() -> const AblationResult& {
    if (!ablation) ablation = desk_ablation(workdir / "ablation", threads);
    return *ablation;
  };
  const std::map<int, std::function<Outcome()>> criteria = {
      {1, gradient_checks},
      {2, metric_oracles},
      {3, beta_statistics},
      {4, gamma_schedule},
      {5, variant_collapse},
      {6, [&] { return dg_effect(get_ablation()); }},
      {7, [&] { return probe_gap(get_ablation()); }},
      {8, [&] { return reproducibility(workdir); }},
  };

  int failed = 0;
  for (const auto& [k, run] : criteria) {
    if (!wanted(k)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << " " << titles.at(k) << ": " << o.detail << " [" << num(secs, 3)
              << " s]" << std::endl;
  }
  if (ablation) {
    std::cout << "\n";
    write_ablation_text(std::cout, *ablation);
  }
  return failed == 0 ? 0 : 1;
}
