#include "mixdann/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "mixdann/errors.hpp"

namespace mixdann {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatMap = Eigen::Map<RowMat>;
using ConstRowMatMap = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t o, kh, kw;
  std::size_t ho, wo;
  int stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

// cols[(c*kh + i)*kw + j, oh*wo + ow] = x[c, oh*s - p + i, ow*s - p + j]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long y = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          double* dst = row + oh * g.wo;
          if (y < 0 || y >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long xx = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            dst[ow] = (xx < 0 || xx >= static_cast<long>(g.w)) ? 0.0 : src[xx];
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long y = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          const double* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long xx = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            if (xx >= 0 && xx < static_cast<long>(g.w)) dst[xx] += src[ow];
          }
        }
      }
}

void check_labels(const char* op, std::span<const int> labels, std::size_t rows, std::size_t k) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(rows) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(l) +
                              " outside [0," + std::to_string(k) + ")");
    }
  }
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, int stride, int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", kernel, 4);
  require_rank("conv2d", bias, 1);
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs[1] != ks[1]) shape_error("conv2d", xs, ks);
  if (bias.shape()[0] != ks[0]) shape_error("conv2d", ks, bias.shape());
  const long hnum = static_cast<long>(xs[2]) + 2L * padding - static_cast<long>(ks[2]);
  const long wnum = static_cast<long>(xs[3]) + 2L * padding - static_cast<long>(ks[3]);
  if (hnum < 0 || wnum < 0) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(xs) +
                     " and kernel " + shape_str(ks));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3],
                 static_cast<std::size_t>(hnum / stride + 1),
                 static_cast<std::size_t>(wnum / stride + 1), stride, padding};

  Tensor out(Shape{g.n, g.o, g.ho, g.wo}, 0.0);
  RowMat cols(g.patch(), g.pixels());
  ConstRowMatMap kmat(kernel.value().data().data(), g.o, g.patch());
  const auto bv = bias.value().data();
  const double* xv = x.value().data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, xv + n * g.c * g.h * g.w, cols.data());
    RowMatMap o(out.data().data() + n * g.o * g.pixels(), g.o, g.pixels());
    o.noalias() = kmat * cols;
    for (std::size_t oc = 0; oc < g.o; ++oc) o.row(oc).array() += bv[oc];
  }

  const std::size_t ix = x.id(), ik = kernel.id(), ib = bias.id();
  const Var ins[] = {x, kernel, bias};
  return x.tape().record(OpKind::Conv2d, ins, std::move(out), [g, ix, ik, ib](Tape& t, const TapeNode& self) {
    const double* gv = self.grad.data().data();
    const double* xv = t.node(ix).value.data().data();
    ConstRowMatMap kmat(t.node(ik).value.data().data(), g.o, g.patch());
    const bool need_x = t.requires_grad(ix);
    const bool need_k = t.requires_grad(ik);
    const bool need_b = t.requires_grad(ib);
    RowMat cols(g.patch(), g.pixels());
    RowMat dcols;
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstRowMatMap go(gv + n * g.o * g.pixels(), g.o, g.pixels());
      if (need_k) {
        im2col(g, xv + n * g.c * g.h * g.w, cols.data());
        RowMatMap dk(t.grad_buffer(ik).data().data(), g.o, g.patch());
        dk.noalias() += go * cols.transpose();
      }
      if (need_b) {
        auto db = t.grad_buffer(ib).data();
        for (std::size_t oc = 0; oc < g.o; ++oc) db[oc] += go.row(oc).sum();
      }
      if (need_x) {
        dcols.noalias() = kmat.transpose() * go;
        col2im_add(g, dcols.data(), t.grad_buffer(ix).data().data() + n * g.c * g.h * g.w);
      }
    }
  });
}

Var maxpool2(Var x) {
  require_rank("maxpool2", x, 4);
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  if (h < 2 || w < 2) throw ShapeError("maxpool2: input too small " + shape_str(s));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out(Shape{n, c, ho, wo}, 0.0);
  std::vector<std::uint32_t> argmax(out.size());
  const auto xv = x.value().data();
  auto o = out.data();
  std::size_t k = 0;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const std::size_t base = nc * h * w;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j, ++k) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + (2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        o[k] = xv[best];
        argmax[k] = static_cast<std::uint32_t>(best);
      }
  }
  const std::size_t ix = x.id();
  const Var ins[] = {x};
  return x.tape().record(OpKind::MaxPool2, ins, std::move(out),
                         [ix, argmax = std::move(argmax)](Tape& t, const TapeNode& self) {
                           if (!t.requires_grad(ix)) return;
                           auto d = t.grad_buffer(ix).data();
                           const auto gv = self.grad.data();
                           for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += gv[i];
                         });
}

Var upsample2_nearest(Var x) {
  require_rank("upsample2_nearest", x, 4);
  const Shape& s = x.shape();
  const std::size_t nc = s[0] * s[1], h = s[2], w = s[3];
  Tensor out(Shape{s[0], s[1], 2 * h, 2 * w}, 0.0);
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j)
        o[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
  const std::size_t ix = x.id();
  const Var ins[] = {x};
  return x.tape().record(OpKind::Upsample2, ins, std::move(out), [ix, nc, h, w](Tape& t, const TapeNode& self) {
    if (!t.requires_grad(ix)) return;
    auto d = t.grad_buffer(ix).data();
    const auto gv = self.grad.data();
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t i = 0; i < 2 * h; ++i)
        for (std::size_t j = 0; j < 2 * w; ++j)
          d[(p * h + i / 2) * w + j / 2] += gv[(p * 2 * h + i) * 2 * w + j];
  });
}

Var concat_channels(Var a, Var b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) shape_error("concat_channels", sa, sb);
  const std::size_t n = sa[0], plane = sa[2] * sa[3];
  const std::size_t ca = sa[1] * plane, cb = sb[1] * plane;
  Tensor out(Shape{n, sa[1] + sb[1], sa[2], sa[3]}, 0.0);
  auto o = out.data();
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + i * ca, ca, o.begin() + i * (ca + cb));
    std::copy_n(bv.begin() + i * cb, cb, o.begin() + i * (ca + cb) + ca);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return a.tape().record(OpKind::Concat, ins, std::move(out), [ia, ib, n, ca, cb](Tape& t, const TapeNode& self) {
    const auto gv = self.grad.data();
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia).data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < ca; ++k) d[i * ca + k] += gv[i * (ca + cb) + k];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib).data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cb; ++k) d[i * cb + k] += gv[i * (ca + cb) + ca + k];
    }
  });
}

Var dense(Var x, Var weight, Var bias) {
  require_rank("dense", x, 2);
  require_rank("dense", weight, 2);
  require_rank("dense", bias, 1);
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in) shape_error("dense", x.shape(), weight.shape());
  if (bias.shape()[0] != out_dim) shape_error("dense", weight.shape(), bias.shape());
  Tensor out(Shape{n, out_dim}, 0.0);
  ConstRowMatMap xm(x.value().data().data(), n, in);
  ConstRowMatMap wm(weight.value().data().data(), out_dim, in);
  RowMatMap om(out.data().data(), n, out_dim);
  om.noalias() = xm * wm.transpose();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) om(i, j) += bv[j];
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  const Var ins[] = {x, weight, bias};
  return x.tape().record(OpKind::Dense, ins, std::move(out),
                         [ix, iw, ib, n, in, out_dim](Tape& t, const TapeNode& self) {
                           ConstRowMatMap go(self.grad.data().data(), n, out_dim);
                           if (t.requires_grad(ix)) {
                             ConstRowMatMap wm(t.node(iw).value.data().data(), out_dim, in);
                             RowMatMap dx(t.grad_buffer(ix).data().data(), n, in);
                             dx.noalias() += go * wm;
                           }
                           if (t.requires_grad(iw)) {
                             ConstRowMatMap xm(t.node(ix).value.data().data(), n, in);
                             RowMatMap dw(t.grad_buffer(iw).data().data(), out_dim, in);
                             dw.noalias() += go.transpose() * xm;
                           }
                           if (t.requires_grad(ib)) {
                             auto db = t.grad_buffer(ib).data();
                             for (std::size_t j = 0; j < out_dim; ++j) db[j] += go.col(j).sum();
                           }
                         });
}

std::vector<double> softmax_row(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

Var softmax(Var logits) {
  require_rank("softmax", logits, 2);
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor out(logits.shape(), 0.0);
  const auto lv = logits.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = softmax_row(lv.subspan(i * k, k));
    std::copy(p.begin(), p.end(), o.begin() + i * k);
  }
  const std::size_t il = logits.id();
  const Var ins[] = {logits};
  return logits.tape().record(OpKind::Softmax, ins, std::move(out), [il, n, k](Tape& t, const TapeNode& self) {
    if (!t.requires_grad(il)) return;
    const auto s = self.value.data();
    const auto gv = self.grad.data();
    auto d = t.grad_buffer(il).data();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gv[i * k + j] * s[i * k + j];
      for (std::size_t j = 0; j < k; ++j) d[i * k + j] += s[i * k + j] * (gv[i * k + j] - dot);
    }
  });
}

Var grl(Var x, GrlConfig cfg) {
  if (!(cfg.gamma >= 0.0)) throw std::invalid_argument("grl: gamma must be >= 0");
  const std::size_t ix = x.id();
  const double factor = -cfg.gamma;
  const Var ins[] = {x};
  return x.tape().record(OpKind::Grl, ins, x.value(), [ix, factor](Tape& t, const TapeNode& self) {
    if (!t.requires_grad(ix)) return;
    auto d = t.grad_buffer(ix).data();
    const auto gv = self.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * gv[i];
  });
}

namespace {

void check_target(const char* op, const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error(op, pred.shape(), target.shape());
}

struct DiceTerms {
  double inter = 0.0, denom = 0.0;
};

DiceTerms dice_terms(std::span<const double> p, std::span<const double> t, double eps) {
  DiceTerms d;
  double sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    d.inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  d.denom = sp + st + eps;
  return d;
}

// d/dp_i of 1 - (2I + eps)/(S + eps)
void dice_grad(std::span<const double> t, const DiceTerms& d, double eps, double g, std::span<double> out) {
  const double num = 2.0 * d.inter + eps;
  const double inv = 1.0 / (d.denom * d.denom);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += -g * (2.0 * t[i] * d.denom - num) * inv;
  }
}

}  // namespace

Var soft_dice_loss(Var pred, const Tensor& target, double eps) {
  check_target("soft_dice_loss", pred, target);
  const DiceTerms d = dice_terms(pred.value().data(), target.data(), eps);
  const double loss = 1.0 - (2.0 * d.inter + eps) / d.denom;
  const std::size_t ip = pred.id();
  const Var ins[] = {pred};
  return pred.tape().record(OpKind::SoftDice, ins, Tensor::scalar(loss),
                            [ip, target, d, eps](Tape& t, const TapeNode& self) {
                              if (!t.requires_grad(ip)) return;
                              dice_grad(target.data(), d, eps, self.grad[0], t.grad_buffer(ip).data());
                            });
}

Var soft_dice_per_item(Var pred, const Tensor& target, double eps) {
  check_target("soft_dice_per_item", pred, target);
  if (pred.shape().empty()) throw ShapeError("soft_dice_per_item: needs a leading batch axis");
  const std::size_t n = pred.shape()[0];
  const std::size_t m = pred.value().size() / n;
  std::vector<DiceTerms> terms(n);
  Tensor out(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    terms[i] = dice_terms(pred.value().data().subspan(i * m, m), target.data().subspan(i * m, m), eps);
    out[i] = 1.0 - (2.0 * terms[i].inter + eps) / terms[i].denom;
  }
  const std::size_t ip = pred.id();
  const Var ins[] = {pred};
  return pred.tape().record(OpKind::SoftDicePerItem, ins, std::move(out),
                            [ip, target, terms = std::move(terms), eps, n, m](Tape& t, const TapeNode& self) {
                              if (!t.requires_grad(ip)) return;
                              auto d = t.grad_buffer(ip).data();
                              for (std::size_t i = 0; i < n; ++i) {
                                dice_grad(target.data().subspan(i * m, m), terms[i], eps, self.grad[i],
                                          d.subspan(i * m, m));
                              }
                            });
}

Var bce_per_item(Var pred, const Tensor& target) {
  check_target("bce_per_item", pred, target);
  if (pred.shape().empty()) throw ShapeError("bce_per_item: needs a leading batch axis");
  static constexpr double kClamp = 1e-12;
  const std::size_t n = pred.shape()[0];
  const std::size_t m = pred.value().size() / n;
  Tensor out(Shape{n}, 0.0);
  const auto p = pred.value().data();
  const auto tv = target.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = i * m; j < (i + 1) * m; ++j) {
      const double q = std::clamp(p[j], kClamp, 1.0 - kClamp);
      s -= tv[j] * std::log(q) + (1.0 - tv[j]) * std::log(1.0 - q);
    }
    out[i] = s / static_cast<double>(m);
  }
  const std::size_t ip = pred.id();
  const Var ins[] = {pred};
  return pred.tape().record(OpKind::BcePerItem, ins, std::move(out), [ip, target, n, m](Tape& t, const TapeNode& self) {
    if (!t.requires_grad(ip)) return;
    const auto p = t.node(ip).value.data();
    const auto tv = target.data();
    auto d = t.grad_buffer(ip).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i] / static_cast<double>(m);
      for (std::size_t j = i * m; j < (i + 1) * m; ++j) {
        const double q = std::clamp(p[j], kClamp, 1.0 - kClamp);
        d[j] += g * (q - tv[j]) / (q * (1.0 - q));
      }
    }
  });
}

Var cross_entropy_per_row(Var logits, std::span<const int> labels) {
  require_rank("cross_entropy_per_row", logits, 2);
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  check_labels("cross_entropy_per_row", labels, n, k);
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor out(Shape{n}, 0.0);
  const auto lv = logits.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = lv.subspan(i * k, k);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    out[i] = (mx + std::log(z)) - row[static_cast<std::size_t>(lab[i])];
  }
  const std::size_t il = logits.id();
  const Var ins[] = {logits};
  return logits.tape().record(OpKind::CrossEntropyPerRow, ins, std::move(out),
                              [il, lab = std::move(lab), n, k](Tape& t, const TapeNode& self) {
                                if (!t.requires_grad(il)) return;
                                const auto lv = t.node(il).value.data();
                                auto d = t.grad_buffer(il).data();
                                for (std::size_t i = 0; i < n; ++i) {
                                  const auto p = softmax_row(lv.subspan(i * k, k));
                                  const double g = self.grad[i];
                                  for (std::size_t j = 0; j < k; ++j) {
                                    const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                                    d[i * k + j] += g * (p[j] - onehot);
                                  }
                                }
                              });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  return mean(cross_entropy_per_row(logits, labels));
}

}  // namespace mixdann
