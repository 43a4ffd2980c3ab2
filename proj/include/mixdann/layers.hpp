#pragma once

#include <span>
#include <vector>

#include "mixdann/autodiff.hpp"

namespace mixdann {

/// 2D cross-correlation. x [N,C,H,W], kernel [O,C,kh,kw], bias [O].
/// Zero padding; output dims floor((H + 2*pad - kh)/stride) + 1.
Var conv2d(Var x, Var kernel, Var bias, int stride = 1, int padding = 0);

/// 2x2 max pooling with stride 2. Gradient routes only to the argmax
/// (first maximum in scan order on ties).
Var maxpool2(Var x);

/// Nearest-neighbour x2 upsampling of [N,C,H,W].
Var upsample2_nearest(Var x);

/// Concatenate [N,Ca,H,W] and [N,Cb,H,W] along channels.
Var concat_channels(Var a, Var b);

/// x [N,in], weight [out,in], bias [out] -> [N,out].
Var dense(Var x, Var weight, Var bias);

/// Row-wise softmax of [N,k].
Var softmax(Var logits);

/// Gradient reversal: identity forward, backward multiplies by -gamma.
struct GrlConfig {
  double gamma = 0.0;
};
Var grl(Var x, GrlConfig cfg);

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps) over the whole tensor.
Var soft_dice_loss(Var pred, const Tensor& target, double eps = 1.0);

/// Soft Dice computed independently for each leading-axis item; returns [N].
Var soft_dice_per_item(Var pred, const Tensor& target, double eps = 1.0);

/// Mean binary cross-entropy per leading-axis item; returns [N].
Var bce_per_item(Var pred, const Tensor& target);

/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Per-row -log softmax(logits)[label]; returns [N].
Var cross_entropy_per_row(Var logits, std::span<const int> labels);

/// Plain (tape-free) softmax used for evaluation and tests.
std::vector<double> softmax_row(std::span<const double> logits);

}  // namespace mixdann
