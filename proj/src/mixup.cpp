#include "mixdann/mixup.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mixdann/errors.hpp"
#include "mixdann/layers.hpp"

namespace mixdann {

void validate(const MixupConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw ConfigError("mixup.alpha must be > 0");
  if (!(cfg.apply_prob >= 0.0 && cfg.apply_prob <= 1.0)) {
    throw ConfigError("mixup.apply_prob must lie in [0,1]");
  }
}

double gamma_at(const GammaSchedule& sched, double epoch) {
  if (sched.max_epoch <= 0) throw std::invalid_argument("gamma_at: max_epoch must be positive");
  if (epoch < 0.0 || epoch > sched.max_epoch) {
    throw std::out_of_range("gamma_at: epoch " + std::to_string(epoch) + " outside [0," +
                            std::to_string(sched.max_epoch) + "]");
  }
  const double p = epoch / static_cast<double>(sched.max_epoch);
  const double logistic = 2.0 / (1.0 + std::exp(-sched.kappa * p));
  if (sched.literal) return sched.xi * logistic - 1.0;
  return sched.xi * (logistic - 1.0);
}

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("sample_gamma: shape must be > 0");
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a)
    const double g = sample_gamma(shape + 1.0, rng);
    return g * std::pow(rng.uniform_open(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0, v = 0.0;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("sample_beta: alpha must be > 0");
  const double a = sample_gamma(alpha, rng);
  const double b = sample_gamma(alpha, rng);
  return a / (a + b);
}

MixedBatch unmixed(const DomainBatch& batch) {
  MixedBatch mb;
  const std::size_t n = batch.size();
  mb.images = batch.images;
  mb.mask_p = batch.masks;
  mb.mask_q = batch.masks;
  mb.lambda.assign(n, 1.0);
  mb.p_index.resize(n);
  mb.q_index.resize(n);
  for (std::size_t i = 0; i < n; ++i) mb.p_index[i] = mb.q_index[i] = i;
  mb.dom_p = batch.domains;
  mb.dom_q = batch.domains;
  mb.mixed.assign(n, false);
  return mb;
}

MixedBatch mix_batch(const DomainBatch& batch, const MixupConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t n = batch.size();
  if (n == 0 || batch.images.dim(0) != n || batch.masks.dim(0) != n) {
    throw ShapeError("mix_batch: images, masks and domains disagree on batch size");
  }
  MixedBatch mb = unmixed(batch);
  const std::size_t img = batch.images.size() / n;
  const std::size_t msk = batch.masks.size() / n;
  const auto x = batch.images.data();
  const auto y = batch.masks.data();
  auto out = mb.images.data();
  auto mq = mb.mask_q.data();
  for (std::size_t p = 0; p < n; ++p) {
    if (!rng.bernoulli(cfg.apply_prob)) continue;
    if (n < 2) throw std::invalid_argument("mix_batch: mixing needs a batch of at least 2");
    const std::size_t j = rng.index(n - 1);
    const std::size_t q = j >= p ? j + 1 : j;
    const double lam = sample_beta(cfg.alpha, rng);
    for (std::size_t k = 0; k < img; ++k) {
      out[p * img + k] = lam * x[p * img + k] + (1.0 - lam) * x[q * img + k];
    }
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(q * msk), msk,
                mq.begin() + static_cast<std::ptrdiff_t>(p * msk));
    mb.lambda[p] = lam;
    mb.q_index[p] = q;
    mb.dom_q[p] = batch.domains[q];
    mb.mixed[p] = true;
  }
  return mb;
}

Var mixed_task_loss(Var pred, const MixedBatch& mb, TaskLoss kind, double dice_eps) {
  const std::size_t n = mb.size();
  if (pred.shape() != mb.mask_p.shape()) {
    throw ShapeError("mixed_task_loss: prediction " + shape_str(pred.shape()) + " vs masks " +
                     shape_str(mb.mask_p.shape()));
  }
  Var lp = kind == TaskLoss::Dice ? soft_dice_per_item(pred, mb.mask_p, dice_eps)
                                  : bce_per_item(pred, mb.mask_p);
  Var lq = kind == TaskLoss::Dice ? soft_dice_per_item(pred, mb.mask_q, dice_eps)
                                  : bce_per_item(pred, mb.mask_q);
  std::vector<double> wp(n), wq(n);
  for (std::size_t i = 0; i < n; ++i) {
    wp[i] = mb.lambda[i] / static_cast<double>(n);
    wq[i] = (1.0 - mb.lambda[i]) / static_cast<double>(n);
  }
  return add(weighted_sum(lp, wp), weighted_sum(lq, wq));
}

Var mixed_domain_loss(Var logits, const MixedBatch& mb, bool mix_labels) {
  const std::size_t n = mb.size();
  if (logits.shape().size() != 2 || logits.shape()[0] != n) {
    throw ShapeError("mixed_domain_loss: logits " + shape_str(logits.shape()) + " for batch of " +
                     std::to_string(n));
  }
  if (!mix_labels) {
    std::vector<int> dominant(n);
    for (std::size_t i = 0; i < n; ++i) dominant[i] = mb.lambda[i] >= 0.5 ? mb.dom_p[i] : mb.dom_q[i];
    return softmax_cross_entropy(logits, dominant);
  }
  Var cp = cross_entropy_per_row(logits, mb.dom_p);
  Var cq = cross_entropy_per_row(logits, mb.dom_q);
  std::vector<double> wp(n), wq(n);
  for (std::size_t i = 0; i < n; ++i) {
    wp[i] = mb.lambda[i] / static_cast<double>(n);
    wq[i] = (1.0 - mb.lambda[i]) / static_cast<double>(n);
  }
  return add(weighted_sum(cp, wp), weighted_sum(cq, wq));
}

}  // namespace mixdann
