#include "afford3d/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "afford3d/error.hpp"
#include "afford3d/kernels.hpp"

namespace afford3d::ad {

// ---------------------------------------------------------------- Tensor

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {
  if (shape_.empty()) fail(ErrorKind::Shape, "tensor rank must be >= 1");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty()) fail(ErrorKind::Shape, "tensor rank must be >= 1");
  if (values_.size() != product(shape_)) {
    fail(ErrorKind::Shape, "tensor " + shape_string() + " given " +
                               std::to_string(values_.size()) + " values");
  }
}

std::size_t Tensor::rows() const {
  if (rank() != 2) fail(ErrorKind::Shape, "rows() on non-matrix " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) fail(ErrorKind::Shape, "cols() on non-matrix " + shape_string());
  return shape_[1];
}

double Tensor::item() const {
  if (values_.size() != 1) fail(ErrorKind::Shape, "item() on tensor " + shape_string());
  return values_[0];
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Matmul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Sum: return "sum";
    case Op::RepeatRows: return "repeat_rows";
    case Op::ConcatRows: return "concat_rows";
    case Op::Reshape: return "reshape";
    case Op::Custom: return "custom";
  }
  return "?";
}

// ------------------------------------------------------------------ Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = Op::Leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Op op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  for (std::size_t i = 0; i < value.numel(); ++i) {
    if (!std::isfinite(value[i])) {
      fail(ErrorKind::NumericDomain, std::string("non-finite output from ") + op_name(op));
    }
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) fail(ErrorKind::InvalidInput, "input is not on this tape");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (!node.grad.same_shape(node.value)) node.grad = Tensor::zeros_like(node.value);
  return node.grad;
}

void Tape::zero_grad() {
  for (Node& node : nodes_)
    if (node.grad.numel() > 0) std::fill(node.grad.storage().begin(), node.grad.storage().end(), 0.0);
}

void Tape::inject_backward_fault(Op op, double factor) {
  fault_op_ = op;
  fault_factor_ = factor;
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) fail(ErrorKind::InvalidInput, "loss is not on this tape");
  if (!nodes_[loss.id].value.is_scalar()) {
    fail(ErrorKind::Shape, "backward needs a scalar loss, got " + nodes_[loss.id].value.shape_string());
  }
  for (Node& node : nodes_) {
    if (node.op != Op::Leaf) node.grad = Tensor();
  }
  auto ensure = [](Node& node) -> Tensor& {
    if (!node.grad.same_shape(node.value)) node.grad = Tensor::zeros_like(node.value);
    return node.grad;
  };
  if (!nodes_[loss.id].requires_grad) return;
  ensure(nodes_[loss.id])[0] += 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.op == Op::Leaf || !node.requires_grad || node.grad.numel() == 0) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      in_grads.push_back(nodes_[in].requires_grad ? &ensure(nodes_[in]) : nullptr);
    }
    if (node.op == fault_op_ && fault_factor_ != 1.0) {
      Tensor scaled = node.grad;
      for (double& g : scaled.storage()) g *= fault_factor_;
      node.backward(in_values, node.value, scaled, in_grads);
    } else {
      node.backward(in_values, node.value, node.grad, in_grads);
    }
  }
}

// ------------------------------------------------------------ primitives

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::Shape, what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + t.shape_string());
}

// Same shape, or one side a single-element tensor.
enum class Pairing { Same, LeftScalar, RightScalar };

Pairing pair_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Pairing::Same;
  if (b.numel() == 1) return Pairing::RightScalar;
  if (a.numel() == 1) return Pairing::LeftScalar;
  fail(ErrorKind::Shape, std::string(op) + ": shapes " + a.shape_string() + " and " +
                             b.shape_string() + " differ");
}

// Folds a full-size gradient into a scalar operand when needed.
void add_into(Tensor* dst, const Tensor& contribution) {
  if (!dst) return;
  if (dst->numel() == contribution.numel()) {
    for (std::size_t i = 0; i < dst->numel(); ++i) (*dst)[i] += contribution[i];
  } else {
    double s = 0.0;
    for (double v : contribution.values()) s += v;
    (*dst)[0] += s;
  }
}

double elementwise_input(const Tensor& t, Pairing pairing, bool left, std::size_t i) {
  const bool scalar = left ? pairing == Pairing::LeftScalar : pairing == Pairing::RightScalar;
  return scalar ? t[0] : t[i];
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  require_matrix(va, "matmul");
  require_matrix(vb, "matmul");
  require(va.cols() == vb.rows(),
          "matmul: inner extents differ " + va.shape_string() + " * " + vb.shape_string());
  const std::size_t m = va.rows(), k = va.cols(), n = vb.cols();
  Tensor out({m, n});
  kernels::gemm(false, false, m, n, k, va.values(), vb.values(), out.values(), false);
  return tape.record(Op::Matmul, std::move(out), {a, b},
                     [m, k, n](auto in, const Tensor&, const Tensor& g, auto grads) {
                       // dA = G·Bᵀ, dB = Aᵀ·G
                       if (grads[0])
                         kernels::gemm(false, true, m, k, n, g.values(), in[1]->values(),
                                       grads[0]->values(), true);
                       if (grads[1])
                         kernels::gemm(true, false, k, n, m, in[0]->values(), g.values(),
                                       grads[1]->values(), true);
                     });
}

Var transpose(Tape& tape, Var x) {
  const Tensor& v = tape.value(x);
  require_matrix(v, "transpose");
  const std::size_t r = v.rows(), c = v.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = v.at(i, j);
  return tape.record(Op::Transpose, std::move(out), {x},
                     [r, c](auto, const Tensor&, const Tensor& g, auto grads) {
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) grads[0]->at(i, j) += g.at(j, i);
                     });
}

namespace {

template <class Forward, class DLeft, class DRight>
Var binary(Tape& tape, Var a, Var b, Op op, Forward forward, DLeft d_left, DRight d_right) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  const Pairing pairing = pair_shapes(va, vb, op_name(op));
  Tensor out(pairing == Pairing::LeftScalar ? vb.shape() : va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = forward(elementwise_input(va, pairing, true, i), elementwise_input(vb, pairing, false, i));
  return tape.record(op, std::move(out), {a, b},
                     [pairing, d_left, d_right](auto in, const Tensor& out, const Tensor& g, auto grads) {
                       Tensor contribution = Tensor::zeros_like(out);
                       for (int side = 0; side < 2; ++side) {
                         if (!grads[side]) continue;
                         for (std::size_t i = 0; i < out.numel(); ++i) {
                           const double x = elementwise_input(*in[0], pairing, true, i);
                           const double y = elementwise_input(*in[1], pairing, false, i);
                           contribution[i] = g[i] * (side == 0 ? d_left(x, y) : d_right(x, y));
                         }
                         add_into(grads[side], contribution);
                       }
                     });
}

template <class Forward, class Derivative>
Var unary(Tape& tape, Var x, Op op, Forward forward, Derivative derivative) {
  const Tensor& v = tape.value(x);
  Tensor out = Tensor::zeros_like(v);
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = forward(v[i]);
  return tape.record(op, std::move(out), {x},
                     [derivative](auto in, const Tensor& out, const Tensor& g, auto grads) {
                       for (std::size_t i = 0; i < out.numel(); ++i)
                         (*grads[0])[i] += g[i] * derivative((*in[0])[i], out[i]);
                     });
}

}  // namespace

Var add(Tape& tape, Var a, Var b) {
  return binary(
      tape, a, b, Op::Add, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Tape& tape, Var a, Var b) {
  return binary(
      tape, a, b, Op::Sub, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Tape& tape, Var a, Var b) {
  return binary(
      tape, a, b, Op::Mul, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(Tape& tape, Var x, double factor) {
  return unary(
      tape, x, Op::Scale, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Var sigmoid(Tape& tape, Var x) {
  return unary(
      tape, x, Op::Sigmoid,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Var relu(Tape& tape, Var x) {
  return unary(
      tape, x, Op::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log(Tape& tape, Var x) {
  for (double v : tape.value(x).values()) {
    if (!(v > 0.0)) fail(ErrorKind::NumericDomain, "log of non-positive value");
  }
  return unary(
      tape, x, Op::Log, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Var softmax_rows(Tape& tape, Var x) {
  const Tensor& v = tape.value(x);
  require_matrix(v, "softmax_rows");
  const std::size_t r = v.rows(), c = v.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double peak = v.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) peak = std::max(peak, v.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out.at(i, j) = std::exp(v.at(i, j) - peak));
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  return tape.record(Op::SoftmaxRows, std::move(out), {x},
                     [r, c](auto, const Tensor& s, const Tensor& g, auto grads) {
                       // dx = s ⊙ (g − ⟨g, s⟩) per row
                       for (std::size_t i = 0; i < r; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * s.at(i, j);
                         for (std::size_t j = 0; j < c; ++j)
                           grads[0]->at(i, j) += s.at(i, j) * (g.at(i, j) - dot);
                       }
                     });
}

Var sum(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).values()) s += v;
  return tape.record(Op::Sum, Tensor::scalar(s), {x},
                     [](auto, const Tensor&, const Tensor& g, auto grads) {
                       for (double& d : grads[0]->storage()) d += g[0];
                     });
}

Var repeat_rows(Tape& tape, Var row, std::size_t rows) {
  const Tensor& v = tape.value(row);
  require(v.rank() == 2 && v.rows() == 1, "repeat_rows: expected 1xn, got " + v.shape_string());
  const std::size_t c = v.cols();
  Tensor out({rows, c});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = v[j];
  return tape.record(Op::RepeatRows, std::move(out), {row},
                     [rows, c](auto, const Tensor&, const Tensor& g, auto grads) {
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t j = 0; j < c; ++j) (*grads[0])[j] += g.at(i, j);
                     });
}

Var concat_rows(Tape& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = tape.value(parts[0]).cols();
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    require_matrix(v, "concat_rows");
    require(v.cols() == c, "concat_rows: column counts differ");
    total += v.rows();
  }
  Tensor out({total, c});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    std::copy(v.values().begin(), v.values().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.numel();
  }
  return tape.record(Op::ConcatRows, std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [](auto in, const Tensor&, const Tensor& g, auto grads) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         const std::size_t n = in[p]->numel();
                         if (grads[p])
                           for (std::size_t i = 0; i < n; ++i) (*grads[p])[i] += g[offset + i];
                         offset += n;
                       }
                     });
}

Var reshape(Tape& tape, Var x, std::vector<std::size_t> shape) {
  const Tensor& v = tape.value(x);
  Tensor out(std::move(shape), std::vector<double>(v.values().begin(), v.values().end()));
  return tape.record(Op::Reshape, std::move(out), {x},
                     [](auto, const Tensor&, const Tensor& g, auto grads) {
                       for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i];
                     });
}

Var custom(Tape& tape, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  return tape.record(Op::Custom, std::move(value), std::move(inputs), std::move(backward));
}

// ------------------------------------------------------ gradient checks

double finite_difference_error(const std::function<double(const Tensor&)>& value_at,
                               const Tensor& x, const Tensor& analytic, double h) {
  if (!(h > 0.0)) fail(ErrorKind::Parameter, "finite difference step must be positive");
  if (!analytic.same_shape(x)) fail(ErrorKind::Shape, "analytic gradient shape mismatch");
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = value_at(probe);
    probe[i] = x[i] - h;
    const double down = value_at(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

double finite_difference_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  Tape tape;
  const Var input = tape.leaf(x);
  tape.backward(f(tape, input));
  const Tensor analytic = tape.grad(input);
  return finite_difference_error(
      [&f](const Tensor& probe) {
        Tape t;
        return t.value(f(t, t.leaf(probe, false))).item();
      },
      x, analytic, h);
}

}  // namespace afford3d::ad
