#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <deque>
#include <vector>

#include "mixdann/tensor.hpp"

namespace mixdann {

enum class OpKind {
  Constant,
  Input,
  Parameter,
  Add,
  Sub,
  Mul,
  Scale,
  MatMul,
  Sum,
  Mean,
  WeightedSum,
  Relu,
  Sigmoid,
  Softmax,
  Reshape,
  Conv2d,
  MaxPool2,
  Upsample2,
  Concat,
  Dense,
  Grl,
  SoftDice,
  SoftDicePerItem,
  BcePerItem,
  CrossEntropyPerRow,
};

const char* op_name(OpKind kind);

/// Which sub-network a trainable tensor belongs to: the feature extractor,
/// the segmentation head, or the domain discriminator.
enum class Role { Theta, Sigma, Mu };

const char* role_name(Role role);
Role parse_role(const std::string& s);

struct Parameter {
  std::string name;
  Role role = Role::Theta;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Role r, Tensor v)
      : name(std::move(n)), role(r), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;
struct TapeNode;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeNode {
  OpKind kind = OpKind::Constant;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  Parameter* param = nullptr;
  // Receives the node itself (value and accumulated grad) and scatters the
  // gradient into the inputs' buffers. Saved context lives in the closure.
  std::function<void(Tape&, const TapeNode&)> backward;
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const TapeNode&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var parameter(Parameter& p);

  Var record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and propagates. Parameter leaves accumulate
  /// into Parameter::grad; they are not zeroed here.
  void backward(Var root);

  /// Gradient of the last backward root with respect to v; zeros when v was
  /// not reached.
  Tensor grad(Var v) const;

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Lazily zero-initialised accumulator for node id.
  Tensor& grad_buffer(std::size_t id);

  const TapeNode& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;
  std::deque<TapeNode> nodes_;  // deque keeps node references stable
};

// Elementwise ops require identical shapes; no broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
/// sum_i w_i * v_i over a rank-1 tensor.
Var weighted_sum(Var v, std::span<const double> weights);
Var relu(Var a);
Var sigmoid(Var a);
Var reshape(Var a, Shape shape);

}  // namespace mixdann
