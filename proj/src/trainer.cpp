#include "mixdann/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "mixdann/errors.hpp"
#include "mixdann/layers.hpp"

namespace mixdann {

namespace {

constexpr std::uint64_t kSplitStream = 100;
constexpr std::uint64_t kOrderStream = 101;
constexpr std::uint64_t kAugmentStream = 102;
constexpr std::uint64_t kMixStream = 103;

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::DeepAll: return "DeepAll";
    case Variant::DANN: return "DANN";
    case Variant::Mixup: return "Mixup";
    case Variant::MixDANN: return "MixDANN";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants) {
    if (s == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected DeepAll, DANN, Mixup or MixDANN)");
}

bool uses_domain_loss(Variant v) { return v == Variant::DANN || v == Variant::MixDANN; }
bool uses_mixup(Variant v) { return v == Variant::Mixup || v == Variant::MixDANN; }

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in [0,1)");
  if (c.gamma_override && !(*c.gamma_override >= 0.0)) throw ConfigError("dann.gamma_override must be >= 0");
  if (c.gamma.literal && uses_domain_loss(c.variant) && !c.gamma_override) {
    throw ConfigError(
        "dann.literal_gamma yields a negative adversarial weight; it can be inspected with gamma_at "
        "but not trained with");
  }
  if (!(c.dice_eps > 0.0)) throw ConfigError("loss.dice_eps must be > 0");
  validate(c.mixup);
}

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,task_loss,domain_loss,gamma,val_dsc,seconds,domain_acc\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << e.task_loss << ',' << e.domain_loss << ',' << e.gamma << ',' << e.val_dsc << ','
        << e.seconds << ',';
    if (std::isnan(e.domain_accuracy)) out << "";
    else out << e.domain_accuracy;
    out << '\n';
  }
}

Split split_domain(std::size_t n, double val_fraction, std::uint64_t seed, int domain_index) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(mix_seed(seed, kSplitStream), static_cast<std::uint64_t>(domain_index)));
  rng.shuffle(idx);
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n) + 0.5));
  if (n_val >= n) n_val = n - 1;
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

Tensor predict_probabilities(const ModelBundle& model, const std::vector<const Subject*>& subjects) {
  if (subjects.empty()) throw std::invalid_argument("predict: no subjects");
  const Shape& s = subjects.front()->image.shape();
  if (s.size() != 3 || s[0] != static_cast<std::size_t>(model.config.in_channels)) {
    throw ShapeError("predict: model expects " + std::to_string(model.config.in_channels) +
                     " channels, image has shape " + shape_str(s));
  }
  ModelBundle m = model;
  const std::size_t n = subjects.size(), per = subjects.front()->image.size();
  Tensor out(Shape{n, 1, s[1], s[2]}, 0.0);
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t k = std::min(kChunk, n - start);
    Tensor x(Shape{k, s[0], s[1], s[2]}, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& img = subjects[start + i]->image;
      if (img.shape() != s) throw ShapeError("predict: subjects differ in shape");
      std::copy(img.data().begin(), img.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    Tape tape;
    const UNetOutput o = unet_forward(tape, m, tape.constant(std::move(x)), Binding::Frozen);
    const auto src = o.mask_prob.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * s[1] * s[2]));
  }
  return out;
}

std::vector<BinaryMask> predict(const ModelBundle& model, const std::vector<const Subject*>& subjects) {
  const Tensor probs = predict_probabilities(model, subjects);
  const std::size_t h = probs.dim(2), w = probs.dim(3);
  std::vector<BinaryMask> out;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    BinaryMask m(h, w);
    for (std::size_t k = 0; k < h * w; ++k) m.set(k, probs[i * h * w + k] > 0.5);
    out.push_back(std::move(m));
  }
  return out;
}

MetricsReport evaluate_domain(const ModelBundle& model, const DomainDataset& domain) {
  std::vector<const Subject*> subjects;
  std::vector<BinaryMask> truth;
  std::vector<int> ids;
  for (const auto& s : domain.subjects) {
    subjects.push_back(&s);
    truth.push_back(BinaryMask::from_tensor(s.mask));
    ids.push_back(s.case_id);
  }
  return evaluate_all(truth, predict(model, subjects), ids);
}

namespace {

struct SourceData {
  const DomainDataset* domain;
  Split split;
};

DomainBatch assemble_batch(const std::vector<SourceData>& sources, const std::vector<std::pair<int, std::size_t>>& items,
                           const TrainConfig& cfg, Rng& aug_rng) {
  const Subject& first = sources.front().domain->subjects.front();
  const Shape& s = first.image.shape();
  const std::size_t n = items.size(), per = first.image.size(), plane = s[1] * s[2];
  DomainBatch b;
  b.images = Tensor(Shape{n, s[0], s[1], s[2]}, 0.0);
  b.masks = Tensor(Shape{n, 1, s[1], s[2]}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [d, idx] = items[i];
    const Subject& subj = sources[static_cast<std::size_t>(d)].domain->subjects[idx];
    Tensor img = subj.image;
    Tensor msk = subj.mask;
    if (cfg.augment.any()) {
      const Affine2 t = sample_affine(cfg.augment, aug_rng);
      warp_pair(t, img, msk);
    }
    std::copy(img.data().begin(), img.data().end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    std::copy(msk.data().begin(), msk.data().end(), b.masks.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
    b.domains.push_back(d);
  }
  return b;
}

void require_finite(double v, const char* what, int epoch, int batch) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch));
  }
}

void require_finite_grads(const std::vector<Parameter*>& params, int epoch, int batch) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in " + p->name + " at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch));
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<DomainDataset>& sources, const TrainObserver& observer) {
  validate(cfg);
  if (sources.empty()) throw DataError("train: no source domains");
  if (uses_domain_loss(cfg.variant) && sources.size() < 2) {
    throw ConfigError(std::string("train: ") + variant_name(cfg.variant) +
                      " needs at least 2 source domains for the domain classifier");
  }
  std::vector<SourceData> src;
  for (std::size_t d = 0; d < sources.size(); ++d) {
    if (sources[d].subjects.empty()) throw DataError("train: source domain " + sources[d].spec.name + " is empty");
    src.push_back({&sources[d], split_domain(sources[d].subjects.size(), cfg.val_fraction, cfg.seed, static_cast<int>(d))});
  }
  const Shape& img_shape = sources.front().subjects.front().image.shape();
  for (const auto& s : sources)
    for (const auto& subj : s.subjects)
      if (subj.image.shape() != img_shape) throw DataError("train: subjects differ in image shape");

  ModelConfig mc;
  mc.in_channels = static_cast<int>(img_shape[0]);
  mc.height = static_cast<int>(img_shape[1]);
  mc.width = static_cast<int>(img_shape[2]);
  mc.base_channels = cfg.base_channels;
  const bool adversarial = uses_domain_loss(cfg.variant);
  const bool mixing = uses_mixup(cfg.variant);
  mc.num_domains = adversarial ? static_cast<int>(sources.size()) : 0;
  ModelBundle model = init_params(mc, cfg.seed);

  const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  Adam task_opt(adam, model.select({Role::Theta, Role::Sigma}));
  std::optional<Adam> domain_opt;
  if (adversarial) domain_opt.emplace(adam, model.select({Role::Theta, Role::Mu}));
  const std::vector<Parameter*> all_params = model.select({Role::Theta, Role::Sigma, Role::Mu});

  Rng order_rng(mix_seed(cfg.seed, kOrderStream));
  Rng aug_rng(mix_seed(cfg.seed, kAugmentStream));
  Rng mix_rng(mix_seed(cfg.seed, kMixStream));

  const std::size_t n_src = src.size();
  const std::size_t per_domain = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size) / n_src);
  std::size_t longest = 0;
  for (const auto& s : src) longest = std::max(longest, s.split.train.size());
  const std::size_t steps = (longest + per_domain - 1) / per_domain;

  std::vector<const Subject*> val_subjects;
  std::vector<BinaryMask> val_truth;
  for (const auto& s : src)
    for (std::size_t i : s.split.val) {
      val_subjects.push_back(&s.domain->subjects[i]);
      val_truth.push_back(BinaryMask::from_tensor(s.domain->subjects[i].mask));
    }

  GammaSchedule sched = cfg.gamma;
  sched.max_epoch = cfg.epochs;

  TrainLog log;
  std::vector<Parameter> best_params;
  double best_val = -std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double gamma = cfg.gamma_override ? *cfg.gamma_override : gamma_at(sched, epoch);
    std::vector<std::vector<std::size_t>> order;
    for (const auto& s : src) {
      auto o = s.split.train;
      order_rng.shuffle(o);
      order.push_back(std::move(o));
    }
    std::vector<double> task_losses, domain_losses;
    std::size_t disc_correct = 0, disc_total = 0;

    for (std::size_t step = 0; step < steps; ++step) {
      const int batch_no = static_cast<int>(step);
      std::vector<std::pair<int, std::size_t>> items;
      for (std::size_t d = 0; d < n_src; ++d) {
        const auto& o = order[d];
        for (std::size_t k = 0; k < per_domain; ++k) {
          items.emplace_back(static_cast<int>(d), o[(step * per_domain + k) % o.size()]);
        }
      }
      const DomainBatch batch = assemble_batch(src, items, cfg, aug_rng);
      const MixedBatch mb = mixing ? mix_batch(batch, cfg.mixup, mix_rng) : unmixed(batch);

      // Task update on (theta, sigma).
      model.zero_grads();
      {
        Tape tape;
        const UNetOutput out = unet_forward(tape, model, tape.constant(mb.images));
        const Var loss = mixed_task_loss(out.mask_prob, mb, cfg.task_loss, cfg.dice_eps);
        require_finite(loss.value().item(), "task loss", epoch, batch_no);
        tape.backward(loss);
        task_losses.push_back(loss.value().item());
      }
      require_finite_grads(all_params, epoch, batch_no);
      task_opt.step();
      if (observer) observer({epoch, batch_no, UpdateKind::Task, &model, &mb});

      // Domain update: mu descends, theta ascends through the reversal layer.
      if (adversarial) {
        model.zero_grads();
        Tape tape;
        const EncoderOutput enc = extract_features(tape, model, tape.constant(mb.images));
        const Var logits = discriminate(tape, model, enc.features, GrlConfig{gamma});
        const Var loss = mixed_domain_loss(logits, mb, cfg.mixup.mix_domain_labels);
        require_finite(loss.value().item(), "domain loss", epoch, batch_no);
        tape.backward(loss);
        domain_losses.push_back(loss.value().item());
        require_finite_grads(all_params, epoch, batch_no);
        domain_opt->step();
        const Tensor& lv = logits.value();
        const std::size_t k = lv.dim(1);
        for (std::size_t i = 0; i < mb.size(); ++i) {
          const auto row = lv.data().subspan(i * k, k);
          const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
          const int truth = mb.lambda[i] >= 0.5 ? mb.dom_p[i] : mb.dom_q[i];
          disc_correct += pred == truth ? 1 : 0;
          ++disc_total;
        }
        if (observer) observer({epoch, batch_no, UpdateKind::Domain, &model, &mb});
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.gamma = gamma;
    rec.task_loss = mean_of(task_losses);
    rec.domain_loss = adversarial ? mean_of(domain_losses) : 0.0;
    rec.domain_accuracy = adversarial ? static_cast<double>(disc_correct) / static_cast<double>(disc_total)
                                      : std::numeric_limits<double>::quiet_NaN();
    if (!val_subjects.empty()) {
      const auto pred = predict(model, val_subjects);
      double s = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) s += dsc(val_truth[i], pred[i]);
      rec.val_dsc = s / static_cast<double>(pred.size());
    }
    if (cfg.select_best && rec.val_dsc > best_val) {
      best_val = rec.val_dsc;
      best_params = model.params;
      log.best_epoch = epoch;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
  }

  if (cfg.select_best && !best_params.empty()) {
    model.params = std::move(best_params);
  } else {
    log.best_epoch = cfg.epochs - 1;
  }
  model.zero_grads();
  return {std::move(model), std::move(log)};
}

}  // namespace mixdann
