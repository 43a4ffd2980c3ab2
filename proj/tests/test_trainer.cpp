#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mixdann/errors.hpp"
#include "mixdann/trainer.hpp"

using namespace mixdann;
namespace fs = std::filesystem;

namespace {

std::vector<DomainDataset> small_benchmark(int n = 6) {
  BenchmarkConfig bc;
  bc.n_per_domain = n;
  bc.height = bc.width = 32;
  return build_benchmark(bc);
}

TrainConfig small_config(Variant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  cfg.base_channels = 4;
  cfg.lr = 1e-3;
  return cfg;
}

std::vector<DomainDataset> sources_of(const std::vector<DomainDataset>& all, std::initializer_list<int> idx) {
  std::vector<DomainDataset> out;
  for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

void check_same_unet(const ModelBundle& a, const ModelBundle& b) {
  for (const auto& p : a.params) {
    if (p.role == Role::Mu) continue;
    CHECK_MESSAGE(p.value == b.find(p.name).value, p.name);
  }
}

void check_same_log(const TrainLog& a, const TrainLog& b, bool with_domain) {
  REQUIRE(a.epochs.size() == b.epochs.size());
  CHECK(a.best_epoch == b.best_epoch);
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].task_loss == b.epochs[e].task_loss);
    CHECK(a.epochs[e].val_dsc == b.epochs[e].val_dsc);
    if (with_domain) {
      CHECK(a.epochs[e].domain_loss == b.epochs[e].domain_loss);
      CHECK(a.epochs[e].gamma == b.epochs[e].gamma);
    }
  }
}

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
  CHECK(uses_domain_loss(Variant::DANN));
  CHECK(uses_domain_loss(Variant::MixDANN));
  CHECK_FALSE(uses_domain_loss(Variant::Mixup));
  CHECK(uses_mixup(Variant::Mixup));
  CHECK_FALSE(uses_mixup(Variant::DeepAll));
  CHECK_THROWS_AS(parse_variant("CycleGAN"), ConfigError);
}

TEST_CASE("Adam one step by hand") {
  Parameter p("w", Role::Theta, Tensor({2}, 0.0));
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  p.grad[0] = 0.5;
  p.grad[1] = -3.0;
  AdamConfig ac;
  ac.lr = 0.1;
  Adam opt(ac, {&p});
  opt.step();
  // after one step mhat = g and vhat = g^2, so the move is lr * g / (|g| + eps)
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));

  p.grad[0] = 0.25;
  p.grad[1] = 0.0;
  const double w0 = p.value[0], w1 = p.value[1];
  opt.step();
  const double m0 = 0.9 * 0.05 + 0.1 * 0.25, v0 = 0.999 * 0.00025 + 0.001 * 0.0625;
  const double m1 = 0.9 * -0.3, v1 = 0.999 * 0.009;
  const double c1 = 1 - 0.81, c2 = 1 - 0.999 * 0.999;
  CHECK(p.value[0] == doctest::Approx(w0 - 0.1 * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8)).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(w1 - 0.1 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8)).epsilon(1e-12));
  CHECK(opt.steps() == 2);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  auto bad = [&](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(validate(c), ConfigError);
  };
  bad([](TrainConfig& c) { c.lr = 0; });
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.val_fraction = 1.0; });
  bad([](TrainConfig& c) { c.gamma_override = -1.0; });
  bad([](TrainConfig& c) { c.gamma.literal = true; });
  bad([](TrainConfig& c) { c.mixup.alpha = 0; });
  TrainConfig lit;
  lit.gamma.literal = true;
  lit.variant = Variant::Mixup;
  CHECK_NOTHROW(validate(lit));
}

TEST_CASE("split_domain") {
  const Split a = split_domain(20, 0.2, 5, 1);
  const Split b = split_domain(20, 0.2, 5, 1);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.val.size() == 4);
  CHECK(a.train.size() == 16);
  std::vector<int> seen(20, 0);
  for (auto i : a.train) ++seen[i];
  for (auto i : a.val) ++seen[i];
  for (int s : seen) CHECK(s == 1);
  CHECK(split_domain(20, 0.2, 5, 2).val != a.val);
  CHECK(split_domain(1, 0.5, 0, 0).train.size() == 1);
  CHECK(split_domain(10, 0.0, 0, 0).val.empty());
}

TEST_CASE("training errors") {
  const auto all = small_benchmark(4);
  CHECK_THROWS_AS(train(small_config(Variant::DANN), sources_of(all, {0})), ConfigError);
  CHECK_THROWS_AS(train(small_config(Variant::MixDANN), sources_of(all, {1})), ConfigError);
  CHECK_THROWS_AS(train(small_config(Variant::DeepAll), {}), DataError);
  auto empty = sources_of(all, {0, 1});
  empty[1].subjects.clear();
  CHECK_THROWS_AS(train(small_config(Variant::DeepAll), empty), DataError);
  TrainConfig lit = small_config(Variant::MixDANN);
  lit.gamma.literal = true;
  CHECK_THROWS_AS(train(lit, sources_of(all, {0, 1})), ConfigError);
}

TEST_CASE("parameter groups and update disjointness") {
  const auto all = small_benchmark();
  const auto src = sources_of(all, {0, 1});

  const TrainResult deep = train(small_config(Variant::DeepAll), src);
  CHECK_FALSE(deep.model.has_discriminator());
  for (const auto& p : deep.model.params) CHECK(p.role != Role::Mu);
  for (const auto& e : deep.log.epochs) CHECK(std::isnan(e.domain_accuracy));

  std::vector<Parameter> before;
  int task_steps = 0, domain_steps = 0;
  bool mu_fixed_on_task = true, sigma_fixed_on_domain = true, theta_moves_on_domain = false;
  const TrainObserver obs = [&](const StepEvent& ev) {
    const auto& params = ev.model->params;
    if (!before.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const bool same = params[i].value == before[i].value;
        if (ev.kind == UpdateKind::Task && params[i].role == Role::Mu && !same) mu_fixed_on_task = false;
        if (ev.kind == UpdateKind::Domain && params[i].role == Role::Sigma && !same) sigma_fixed_on_domain = false;
        if (ev.kind == UpdateKind::Domain && params[i].role == Role::Theta && !same) theta_moves_on_domain = true;
      }
    }
    (ev.kind == UpdateKind::Task ? task_steps : domain_steps)++;
    before = params;
  };
  TrainConfig cfg = small_config(Variant::MixDANN);
  cfg.gamma_override = 1.0;
  const TrainResult md = train(cfg, src, obs);
  CHECK(md.model.has_discriminator());
  CHECK(task_steps > 0);
  CHECK(task_steps == domain_steps);
  CHECK(mu_fixed_on_task);
  CHECK(sigma_fixed_on_domain);
  CHECK(theta_moves_on_domain);
  for (const auto& e : md.log.epochs) {
    CHECK(e.gamma == 1.0);
    CHECK(e.domain_accuracy >= 0.0);
    CHECK(e.domain_accuracy <= 1.0);
  }
}

TEST_CASE("same seed gives a bit-identical run") {
  const auto all = small_benchmark();
  const auto src = sources_of(all, {0, 2});
  for (Variant v : kAllVariants) {
    const TrainResult a = train(small_config(v), src);
    const TrainResult b = train(small_config(v), src);
    check_same_log(a.log, b.log, true);
    REQUIRE(a.model.params.size() == b.model.params.size());
    for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK(a.model.params[i].value == b.model.params[i].value);
  }
  TrainConfig other = small_config(Variant::Mixup);
  other.seed = 4;
  CHECK(train(other, src).log.epochs[0].task_loss != train(small_config(Variant::Mixup), src).log.epochs[0].task_loss);
}

TEST_CASE("variants collapse when their extra term is switched off") {
  const auto all = small_benchmark();
  const auto src = sources_of(all, {0, 1});

  SUBCASE("MixDANN with gamma 0 is Mixup on the U-Net") {
    TrainConfig md = small_config(Variant::MixDANN);
    md.gamma_override = 0.0;
    const TrainResult a = train(md, src);
    const TrainResult b = train(small_config(Variant::Mixup), src);
    check_same_unet(a.model, b.model);
    check_same_log(a.log, b.log, false);
  }
  SUBCASE("DANN with gamma 0 is DeepAll on the U-Net") {
    TrainConfig d = small_config(Variant::DANN);
    d.gamma_override = 0.0;
    const TrainResult a = train(d, src);
    const TrainResult b = train(small_config(Variant::DeepAll), src);
    check_same_unet(a.model, b.model);
    check_same_log(a.log, b.log, false);
  }
  SUBCASE("MixDANN with gamma 0 and no mixing is DeepAll") {
    TrainConfig md = small_config(Variant::MixDANN);
    md.gamma_override = 0.0;
    md.mixup.apply_prob = 0.0;
    const TrainResult a = train(md, src);
    const TrainResult b = train(small_config(Variant::DeepAll), src);
    check_same_unet(a.model, b.model);
    check_same_log(a.log, b.log, false);
  }
  SUBCASE("a positive gamma changes the U-Net") {
    TrainConfig md = small_config(Variant::MixDANN);
    md.gamma_override = 0.5;
    const TrainResult a = train(md, src);
    const TrainResult b = train(small_config(Variant::Mixup), src);
    CHECK(a.model.find("enc1a.weight").value != b.model.find("enc1a.weight").value);
  }
}

TEST_CASE("discriminator learns the domains when not reversed") {
  const auto all = small_benchmark(12);
  TrainConfig cfg = small_config(Variant::DANN);
  cfg.gamma_override = 0.0;
  cfg.epochs = 3;
  const TrainResult r = train(cfg, sources_of(all, {0, 2}));
  CHECK(r.log.epochs.back().domain_accuracy > 0.5 + 0.1);
}

TEST_CASE("prediction") {
  const auto all = small_benchmark(3);
  ModelConfig mc;
  mc.height = mc.width = 32;
  mc.base_channels = 4;
  ModelBundle model = init_params(mc, 1);
  // zero every weight: the head outputs sigmoid(0) = 0.5, which is background
  for (auto& p : model.params) p.value.fill(0.0);
  std::vector<const Subject*> subjects;
  for (const auto& s : all[0].subjects) subjects.push_back(&s);
  const Tensor prob = predict_probabilities(model, subjects);
  CHECK(prob.shape() == Shape{3, 1, 32, 32});
  for (double v : prob.data()) CHECK(v == 0.5);
  for (const auto& m : predict(model, subjects)) CHECK(m.count() == 0);

  const ModelBundle fresh = init_params(mc, 2);
  CHECK(predict_probabilities(fresh, subjects) == predict_probabilities(fresh, subjects));
  const MetricsReport rep = evaluate_domain(fresh, all[0]);
  CHECK(rep.cases.size() == 3);
}

TEST_CASE("train log CSV") {
  TrainLog log;
  EpochRecord a;
  a.epoch = 0;
  a.task_loss = 0.5;
  a.domain_accuracy = std::nan("");
  EpochRecord b = a;
  b.epoch = 1;
  b.domain_accuracy = 0.75;
  log.epochs = {a, b};
  log.best_epoch = 1;
  const fs::path path = fs::temp_directory_path() / "mixdann_train_log.csv";
  write_train_log_csv(path, log);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,task_loss,domain_loss,gamma,val_dsc,seconds,domain_acc");
  std::getline(in, line);
  CHECK(line.rfind("0,0.5,", 0) == 0);
  CHECK(line.back() == ',');
  std::getline(in, line);
  CHECK(line.substr(line.rfind(',') + 1) == "0.75");
}
