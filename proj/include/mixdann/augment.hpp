#pragma once

#include "mixdann/rng.hpp"
#include "mixdann/tensor.hpp"

namespace mixdann {

struct AugmentConfig {
  bool rotation = true;
  bool scale = true;
  bool shear = true;
  double prob = 0.5;           // per transform
  double max_rotation_deg = 15.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_shear = 0.1;

  bool any() const { return rotation || scale || shear; }
};

/// 2x2 linear map applied about the image centre.
struct Affine2 {
  double a = 1, b = 0, c = 0, d = 1;
};

Affine2 sample_affine(const AugmentConfig& cfg, Rng& rng);

/// Warps image [C,H,W] bilinearly and mask [H,W] by nearest neighbour with
/// the same transform; outside samples read as 0.
void warp_pair(const Affine2& t, Tensor& image, Tensor& mask);

}  // namespace mixdann
