#pragma once

#include <cstddef>
#include <vector>

#include "mixdann/autodiff.hpp"
#include "mixdann/rng.hpp"
#include "mixdann/tensor.hpp"

namespace mixdann {

struct MixupConfig {
  double alpha = 0.7;
  double apply_prob = 0.5;
  /// Mix the domain targets with the same lambda as the task targets. When
  /// false, each mixed item keeps the domain of its dominant parent.
  bool mix_domain_labels = true;
};

void validate(const MixupConfig& cfg);

/// Ramp for the adversarial weight, p = epoch / max_epoch.
struct GammaSchedule {
  double xi = 0.1;
  double kappa = 3.0;
  int max_epoch = 60;
  /// Use the formula exactly as printed, (2*xi)/(1+exp(-kappa*p)) - 1.
  /// It is negative everywhere and only kept for comparison.
  bool literal = false;
};

double gamma_at(const GammaSchedule& sched, double epoch);

/// Gamma(shape, 1) variate (Marsaglia-Tsang, boosted by U^(1/shape) for
/// shape < 1).
double sample_gamma(double shape, Rng& rng);

/// Exact Beta(alpha, alpha) variate as G1 / (G1 + G2).
double sample_beta(double alpha, Rng& rng);

/// Images [N,C,H,W], masks [N,1,H,W], one domain label per item.
struct DomainBatch {
  Tensor images;
  Tensor masks;
  std::vector<int> domains;

  std::size_t size() const { return domains.size(); }
};

struct MixedBatch {
  Tensor images;
  std::vector<double> lambda;
  std::vector<std::size_t> p_index;
  std::vector<std::size_t> q_index;
  Tensor mask_p;
  Tensor mask_q;
  std::vector<int> dom_p;
  std::vector<int> dom_q;
  std::vector<bool> mixed;

  std::size_t size() const { return lambda.size(); }
};

/// Each item is replaced with probability apply_prob by
/// lambda*x_p + (1-lambda)*x_q, q a uniformly drawn distinct partner.
/// Unmixed items carry lambda = 1 and q = p.
MixedBatch mix_batch(const DomainBatch& batch, const MixupConfig& cfg, Rng& rng);

/// Identity wrapping (no mixing) of a batch, used by the unmixed variants.
MixedBatch unmixed(const DomainBatch& batch);

enum class TaskLoss { Dice, BinaryCrossEntropy };

/// mean_i [lambda_i L(pred_i, mask_p_i) + (1 - lambda_i) L(pred_i, mask_q_i)]
Var mixed_task_loss(Var pred, const MixedBatch& mb, TaskLoss kind = TaskLoss::Dice,
                    double dice_eps = 1.0);

/// mean_i [lambda_i CE(logits_i, dom_p_i) + (1 - lambda_i) CE(logits_i, dom_q_i)]
Var mixed_domain_loss(Var logits, const MixedBatch& mb, bool mix_labels = true);

}  // namespace mixdann
