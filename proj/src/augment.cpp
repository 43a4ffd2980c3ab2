#include "mixdann/augment.hpp"

#include <cmath>
#include <numbers>

namespace mixdann {

Affine2 sample_affine(const AugmentConfig& cfg, Rng& rng) {
  Affine2 t;
  auto compose = [&t](const Affine2& m) {
    t = {m.a * t.a + m.b * t.c, m.a * t.b + m.b * t.d, m.c * t.a + m.d * t.c, m.c * t.b + m.d * t.d};
  };
  // Draw every decision and value unconditionally so the stream position
  // does not depend on which transforms are enabled.
  const bool do_rot = rng.bernoulli(cfg.prob);
  const double deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  const bool do_scale = rng.bernoulli(cfg.prob);
  const double s = rng.uniform(cfg.min_scale, cfg.max_scale);
  const bool do_shear = rng.bernoulli(cfg.prob);
  const double sh = rng.uniform(-cfg.max_shear, cfg.max_shear);
  if (cfg.shear && do_shear) compose({1.0, sh, 0.0, 1.0});
  if (cfg.scale && do_scale) compose({s, 0.0, 0.0, s});
  if (cfg.rotation && do_rot) {
    const double r = deg * std::numbers::pi / 180.0;
    compose({std::cos(r), -std::sin(r), std::sin(r), std::cos(r)});
  }
  return t;
}

void warp_pair(const Affine2& t, Tensor& image, Tensor& mask) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double det = t.a * t.d - t.b * t.c;
  // Inverse map: output pixel -> source location.
  const Affine2 inv{t.d / det, -t.b / det, -t.c / det, t.a / det};
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor img_out(image.shape(), 0.0);
  Tensor msk_out(mask.shape(), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = inv.a * dx + inv.b * dy + cx;
      const double sy = inv.c * dx + inv.d * dy + cy;
      const long nx = std::lround(sx), ny = std::lround(sy);
      if (nx >= 0 && ny >= 0 && nx < static_cast<long>(w) && ny < static_cast<long>(h)) {
        msk_out[y * w + x] = mask[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)];
      }
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = image.data().data() + ch * h * w;
        auto px = [&](long yy, long xx) {
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return 0.0;
          return src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
        };
        img_out[(ch * h + y) * w + x] = (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
                                        ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
      }
    }
  image = std::move(img_out);
  mask = std::move(msk_out);
}

}  // namespace mixdann
