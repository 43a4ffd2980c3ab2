#include "mixdann/autodiff.hpp"

#include <cmath>

#include "mixdann/errors.hpp"

namespace mixdann {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::MatMul: return "matmul";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Reshape: return "reshape";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2: return "maxpool2";
    case OpKind::Upsample2: return "upsample2_nearest";
    case OpKind::Concat: return "concat_channels";
    case OpKind::Dense: return "dense";
    case OpKind::Grl: return "grl";
    case OpKind::SoftDice: return "soft_dice_loss";
    case OpKind::SoftDicePerItem: return "soft_dice_per_item";
    case OpKind::BcePerItem: return "bce_per_item";
    case OpKind::CrossEntropyPerRow: return "cross_entropy_per_row";
  }
  return "?";
}

const char* role_name(Role role) {
  switch (role) {
    case Role::Theta: return "theta";
    case Role::Sigma: return "sigma";
    case Role::Mu: return "mu";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  if (s == "theta") return Role::Theta;
  if (s == "sigma") return Role::Sigma;
  if (s == "mu") return Role::Mu;
  throw DataError("unknown parameter role: " + s);
}

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }

Var Tape::constant(Tensor value) {
  TapeNode n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  TapeNode n;
  n.kind = OpKind::Input;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  TapeNode n;
  n.kind = OpKind::Parameter;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward) {
  TapeNode n;
  n.kind = kind;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw std::logic_error(std::string(op_name(kind)) + ": input from another tape");
    n.inputs.push_back(v.id_);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  TapeNode& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::logic_error("backward: root from another tape");
  const TapeNode& r = nodes_[root.id_];
  if (r.value.rank() != 0) {
    throw ShapeError("backward: root must be a scalar, got shape " + shape_str(r.value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(root.id_)[0] = 1.0;

  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    TapeNode& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

Tensor Tape::grad(Var v) const {
  const TapeNode& n = nodes_[v.id_];
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void accumulate(Tape& t, std::size_t id, std::span<const double> g, double factor = 1.0) {
  if (!t.requires_grad(id)) return;
  auto dst = t.grad_buffer(id).data();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += factor * g[k];
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return a.tape().record(OpKind::Add, ins, std::move(out), [ia, ib](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    accumulate(t, ia, g.data());
    accumulate(t, ib, g.data());
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return a.tape().record(OpKind::Sub, ins, std::move(out), [ia, ib](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    accumulate(t, ia, g.data());
    accumulate(t, ib, g.data(), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return a.tape().record(OpKind::Mul, ins, std::move(out), [ia, ib](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    const auto av = t.node(ia).value.data();
    const auto bv = t.node(ib).value.data();
    const auto gv = g.data();
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Scale, ins, std::move(out), [ia, c](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    accumulate(t, ia, g.data(), c);
  });
}

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n}, 0.0);
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += x * bv[p * n + j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return a.tape().record(OpKind::MatMul, ins, std::move(out),
                         [ia, ib, m, k, n](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
                           const auto av = t.node(ia).value.data();
                           const auto bv = t.node(ib).value.data();
                           const auto gv = g.data();
                           if (t.requires_grad(ia)) {
                             auto d = t.grad_buffer(ia).data();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) s += gv[i * n + j] * bv[p * n + j];
                                 d[i * k + p] += s;
                               }
                           }
                           if (t.requires_grad(ib)) {
                             auto d = t.grad_buffer(ib).data();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double x = av[i * k + p];
                                 for (std::size_t j = 0; j < n; ++j) d[p * n + j] += x * gv[i * n + j];
                               }
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Sum, ins, Tensor::scalar(s), [ia](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    if (!t.requires_grad(ia)) return;
    const double gv = g[0];
    for (double& d : t.grad_buffer(ia).data()) d += gv;
  });
}

Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double n = static_cast<double>(a.value().size());
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Mean, ins, Tensor::scalar(s / n), [ia, n](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    if (!t.requires_grad(ia)) return;
    const double gv = g[0] / n;
    for (double& d : t.grad_buffer(ia).data()) d += gv;
  });
}

Var weighted_sum(Var v, std::span<const double> weights) {
  if (v.shape().size() != 1 || v.shape()[0] != weights.size()) {
    throw ShapeError("weighted_sum: values " + shape_str(v.shape()) + " vs weights [" +
                     std::to_string(weights.size()) + "]");
  }
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  const auto vv = v.value().data();
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * vv[i];
  const std::size_t iv = v.id();
  const Var ins[] = {v};
  return v.tape().record(OpKind::WeightedSum, ins, Tensor::scalar(s),
                         [iv, w = std::move(w)](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
                           if (!t.requires_grad(iv)) return;
                           auto d = t.grad_buffer(iv).data();
                           for (std::size_t i = 0; i < w.size(); ++i) d[i] += g[0] * w[i];
                         });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Relu, ins, std::move(out), [ia](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    if (!t.requires_grad(ia)) return;
    const auto x = t.node(ia).value.data();
    const auto gv = g.data();
    auto d = t.grad_buffer(ia).data();
    // Subgradient at 0 is 0.
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > 0.0 ? gv[i] : 0.0;
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Sigmoid, ins, std::move(out), [ia](Tape& t, const TapeNode& self) {
    if (!t.requires_grad(ia)) return;
    const auto s = self.value.data();
    const auto gv = self.grad.data();
    auto d = t.grad_buffer(ia).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * s[i] * (1.0 - s[i]);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  const Var ins[] = {a};
  return a.tape().record(OpKind::Reshape, ins, std::move(out), [ia](Tape& t, const TapeNode& self) {
    const Tensor& g = self.grad;
    accumulate(t, ia, g.data());
  });
}

}  // namespace mixdann
