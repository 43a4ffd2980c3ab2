#pragma once

#include <vector>

#include "mixdann/autodiff.hpp"

namespace mixdann {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter group. Each optimiser
/// owns its own moment estimates, so two optimisers sharing a parameter do
/// not interfere.
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<Parameter*> params);

  /// Applies one update from each parameter's current grad.
  void step();

  long steps() const noexcept { return t_; }
  const std::vector<Parameter*>& params() const noexcept { return params_; }

 private:
  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace mixdann
