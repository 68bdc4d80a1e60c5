#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace afford3d::ad {

/// Dense row-major tensor of doubles. No broadcasting: shapes are explicit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only
  bool is_scalar() const { return values_.size() == 1; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::string shape_string() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

enum class Op {
  Leaf,
  Matmul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  Sigmoid,
  Relu,
  Log,
  SoftmaxRows,
  Sum,
  RepeatRows,
  ConcatRows,
  Reshape,
  Custom,
};

const char* op_name(Op op);

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Receives (input values, output value, output gradient) and adds each
/// input's contribution into grads[i]; grads[i] is null when input i does
/// not require a gradient.
using BackwardFn = std::function<void(std::span<const Tensor* const> inputs, const Tensor& output,
                                      const Tensor& out_grad, std::span<Tensor* const> grads)>;

// Records primitives in creation order; node ids are a topological order, so
// backward simply walks ids downward from the loss.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Op op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Accumulated gradient; zeros if the node never received one.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every requires-grad
  /// leaf. Intermediate gradients are rebuilt on every call; leaf gradients
  /// add up until zero_grad().
  void backward(Var loss);
  void zero_grad();

  /// Test hook: scales every backward contribution of `op` by `factor`.
  void inject_backward_fault(Op op, double factor);

 private:
  struct Node {
    Op op = Op::Leaf;
    Tensor value;
    mutable Tensor grad;  // lazily sized
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  Op fault_op_ = Op::Leaf;
  double fault_factor_ = 1.0;
};

// Primitive operations. Each checks shapes, throws on non-finite results and
// registers its backward rule.
Var matmul(Tape& tape, Var a, Var b);
Var transpose(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var sigmoid(Tape& tape, Var x);
Var relu(Tape& tape, Var x);
Var log(Tape& tape, Var x);
Var softmax_rows(Tape& tape, Var x);
Var sum(Tape& tape, Var x);
/// 1×n → rows×n by explicit replication (bias rows).
Var repeat_rows(Tape& tape, Var row, std::size_t rows);
/// Stacks rank-2 tensors with equal column counts.
Var concat_rows(Tape& tape, std::span<const Var> parts);
Var reshape(Tape& tape, Var x, std::vector<std::size_t> shape);

/// Registers a caller-computed primitive (e.g. a loss with an analytic
/// gradient). The output must be finite.
Var custom(Tape& tape, std::vector<Var> inputs, Tensor value, BackwardFn backward);

/// Max over coordinates of |g_analytic - g_fd| / max(1, |g_fd|) with central
/// differences of step h.
double finite_difference_error(const std::function<double(const Tensor&)>& value_at,
                               const Tensor& x, const Tensor& analytic, double h = 1e-6);

/// Builds f on a fresh tape, back-propagates, and compares the tape gradient
/// of x against central differences.
double finite_difference_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                               double h = 1e-6);

}  // namespace afford3d::ad
