#include "nkn/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nkn/error.hpp"

namespace nkn::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const DenseArray& a) {
  return ConstMatMap(a.storage().data(), static_cast<Eigen::Index>(a.shape()[0]),
                     static_cast<Eigen::Index>(a.shape()[1]));
}

MatMap as_matrix(DenseArray& a) {
  return MatMap(a.storage().data(), static_cast<Eigen::Index>(a.shape()[0]),
                static_cast<Eigen::Index>(a.shape()[1]));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const char* what) {
  std::ostringstream os;
  os << op << ": " << what << " (" << shape_string(a) << " vs " << shape_string(b) << ")";
  throw ShapeError(os.str());
}

void ensure_shape(DenseArray& a, const Shape& shape) {
  if (a.shape() != shape) a = DenseArray(shape);
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseArray::DenseArray(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("DenseArray: extents must be positive, got " + shape_string(shape_));
  }
  values_.assign(shape_size(shape_), fill);
}

DenseArray::DenseArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("DenseArray: extents must be positive, got " + shape_string(shape_));
  }
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("DenseArray: " + std::to_string(values_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, double fill) {
  return DenseArray({rows, cols}, fill);
}

DenseArray DenseArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return DenseArray({n}, std::move(values));
}

DenseArray DenseArray::scalar(double value) { return DenseArray({1}, std::vector<double>{value}); }

std::size_t DenseArray::rows() const {
  if (rank() != 2) throw ShapeError("rows(): expected rank 2, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t DenseArray::cols() const {
  if (rank() != 2) throw ShapeError("cols(): expected rank 2, got " + shape_string(shape_));
  return shape_[1];
}

void DenseArray::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

DenseArray DenseArray::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return DenseArray(std::move(shape), values_);
}

bool DenseArray::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::sum: return "sum";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::reshape: return "reshape";
    case OpKind::gather: return "gather";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

Var Tape::push(Node n) {
  if (nodes_.size() >= UINT32_MAX - 1) throw Error("tape: node limit reached");
  Var v{static_cast<std::uint32_t>(nodes_.size())};
  nodes_.push_back(std::move(n));
  values_.emplace_back();
  grads_.emplace_back();
  leaf_set_.push_back(false);
  forward_done_ = false;
  backward_done_ = false;
  return v;
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("tape: invalid variable handle");
  return nodes_[v.id];
}

Var Tape::input(Shape shape, std::string name) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("input: extents must be positive, got " + shape_string(shape));
  }
  Node n{OpKind::input, std::move(shape), {}, {}, 0, true, std::move(name)};
  Var v = push(std::move(n));
  inputs_.push_back(v);
  return v;
}

Var Tape::input(DenseArray value, std::string name) {
  Var v = input(value.shape(), std::move(name));
  set(v, std::move(value));
  return v;
}

Var Tape::constant(DenseArray value) {
  Node n{OpKind::constant, value.shape(), {}, {}, 0, false, {}};
  Var v = push(std::move(n));
  values_[v.id] = std::move(value);
  leaf_set_[v.id] = true;
  return v;
}

Var Tape::constant(Shape shape, double fill) { return constant(DenseArray(std::move(shape), fill)); }

void Tape::set(Var leaf, DenseArray value) {
  const Node& n = node(leaf);
  if (n.kind != OpKind::input && n.kind != OpKind::constant) {
    throw Error(std::string("set: node is a ") + op_name(n.kind) + ", not a leaf");
  }
  if (value.shape() != n.shape) shape_fail("set", n.shape, value.shape(), "leaf shape mismatch");
  values_[leaf.id] = std::move(value);
  leaf_set_[leaf.id] = true;
  forward_done_ = false;
  backward_done_ = false;
}

void Tape::set(Var leaf, std::span<const double> values) {
  const Node& n = node(leaf);
  if (values.size() != shape_size(n.shape)) {
    throw ShapeError("set: " + std::to_string(values.size()) + " values for leaf of shape " +
                     shape_string(n.shape));
  }
  DenseArray& dst = values_[leaf.id];
  if (dst.shape() != n.shape) dst = DenseArray(n.shape);
  std::copy(values.begin(), values.end(), dst.storage().begin());
  leaf_set_[leaf.id] = true;
  forward_done_ = false;
  backward_done_ = false;
}

Var Tape::matmul(Var a, Var b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa.size() != 2 || sb.size() != 2) shape_fail("matmul", sa, sb, "operands must be rank 2");
  if (sa[1] != sb[0]) shape_fail("matmul", sa, sb, "inner dimensions differ");
  bool g = node(a).needs_grad || node(b).needs_grad;
  return push({OpKind::matmul, {sa[0], sb[1]}, {a.id, b.id}, {}, 0, g, {}});
}

Var Tape::add(Var a, Var b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa != sb) shape_fail("add", sa, sb, "shapes differ");
  bool g = node(a).needs_grad || node(b).needs_grad;
  return push({OpKind::add, sa, {a.id, b.id}, {}, 0, g, {}});
}

Var Tape::mul(Var a, Var b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa != sb) shape_fail("mul", sa, sb, "shapes differ");
  bool g = node(a).needs_grad || node(b).needs_grad;
  return push({OpKind::mul, sa, {a.id, b.id}, {}, 0, g, {}});
}

Var Tape::relu(Var a) {
  const Node& na = node(a);
  return push({OpKind::relu, na.shape, {a.id}, {}, 0, na.needs_grad, {}});
}

Var Tape::sum(Var a) {
  const Node& na = node(a);
  return push({OpKind::sum, {1}, {a.id}, {}, 0, na.needs_grad, {}});
}

Var Tape::sum_axis(Var a, std::size_t axis) {
  const Node& na = node(a);
  if (na.shape.size() != 2) shape_fail("sum_axis", na.shape, {axis}, "operand must be rank 2");
  if (axis > 1) shape_fail("sum_axis", na.shape, {axis}, "axis must be 0 or 1");
  Shape out = axis == 1 ? Shape{na.shape[0], 1} : Shape{1, na.shape[1]};
  return push({OpKind::sum_axis, out, {a.id}, {}, axis, na.needs_grad, {}});
}

Var Tape::mean(Var a) {
  const Node& na = node(a);
  return push({OpKind::mean, {1}, {a.id}, {}, 0, na.needs_grad, {}});
}

Var Tape::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  Shape out = node(parts[0]).shape;
  if (out.size() != 2) shape_fail("concat", out, out, "operands must be rank 2");
  std::vector<std::uint32_t> args;
  bool g = false;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Node& n = node(parts[k]);
    if (n.shape.size() != 2) shape_fail("concat", out, n.shape, "operands must be rank 2");
    if (k > 0) {
      if (n.shape[1 - axis] != out[1 - axis]) shape_fail("concat", out, n.shape, "off-axis extents differ");
      out[axis] += n.shape[axis];
    }
    g = g || n.needs_grad;
    args.push_back(parts[k].id);
  }
  return push({OpKind::concat, out, std::move(args), {}, axis, g, {}});
}

Var Tape::concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var Tape::reshape(Var a, Shape shape) {
  const Node& na = node(a);
  if (shape_size(shape) != shape_size(na.shape)) shape_fail("reshape", na.shape, shape, "element counts differ");
  for (auto e : shape) {
    if (e == 0) shape_fail("reshape", na.shape, shape, "extents must be positive");
  }
  return push({OpKind::reshape, std::move(shape), {a.id}, {}, 0, na.needs_grad, {}});
}

Var Tape::gather(Var a, std::vector<std::size_t> indices, Shape shape) {
  const Node& na = node(a);
  if (indices.size() != shape_size(shape)) {
    shape_fail("gather", {indices.size()}, shape, "index count does not match output shape");
  }
  const std::size_t n = shape_size(na.shape);
  for (auto ix : indices) {
    if (ix >= n) {
      throw ShapeError("gather: index " + std::to_string(ix) + " out of range for operand " +
                       shape_string(na.shape));
    }
  }
  return push({OpKind::gather, std::move(shape), {a.id}, std::move(indices), 0, na.needs_grad, {}});
}

// ---------------------------------------------------------------------------
// Evaluation

void Tape::eval_node(std::size_t id) {
  const Node& n = nodes_[id];
  DenseArray& out = values_[id];
  auto arg = [&](std::size_t k) -> const DenseArray& { return values_[n.args[k]]; };
  switch (n.kind) {
    case OpKind::input:
    case OpKind::constant:
      if (!leaf_set_[id]) {
        throw Error("forward: input '" + n.name + "' (node " + std::to_string(id) + ") has no value");
      }
      return;
    case OpKind::matmul: {
      ensure_shape(out, n.shape);
      as_matrix(out).noalias() = as_matrix(arg(0)) * as_matrix(arg(1));
      return;
    }
    case OpKind::add: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      const auto& b = arg(1).storage();
      auto& o = out.storage();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
      return;
    }
    case OpKind::mul: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      const auto& b = arg(1).storage();
      auto& o = out.storage();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
      return;
    }
    case OpKind::relu: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      auto& o = out.storage();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] > 0.0 ? a[i] : 0.0;
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      double s = 0.0;
      for (double v : a) s += v;
      out[0] = n.kind == OpKind::sum ? s : s / static_cast<double>(a.size());
      return;
    }
    case OpKind::sum_axis: {
      ensure_shape(out, n.shape);
      const DenseArray& a = arg(0);
      const std::size_t r = a.shape()[0], c = a.shape()[1];
      auto& o = out.storage();
      std::fill(o.begin(), o.end(), 0.0);
      if (n.axis == 1) {
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += a[i * c + j];
          o[i] = s;
        }
      } else {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) o[j] += a[i * c + j];
      }
      return;
    }
    case OpKind::concat: {
      ensure_shape(out, n.shape);
      const std::size_t oc = n.shape[1];
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        const DenseArray& p = arg(k);
        const std::size_t pr = p.shape()[0], pc = p.shape()[1];
        if (n.axis == 0) {
          std::copy(p.storage().begin(), p.storage().end(), out.storage().begin() + offset * oc);
          offset += pr;
        } else {
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * oc + offset + j] = p[i * pc + j];
          offset += pc;
        }
      }
      return;
    }
    case OpKind::reshape: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      std::copy(a.begin(), a.end(), out.storage().begin());
      return;
    }
    case OpKind::gather: {
      ensure_shape(out, n.shape);
      const auto& a = arg(0).storage();
      auto& o = out.storage();
      for (std::size_t k = 0; k < o.size(); ++k) o[k] = a[n.indices[k]];
      return;
    }
  }
}

void Tape::forward() {
  for (std::size_t id = 0; id < nodes_.size(); ++id) eval_node(id);
  forward_done_ = true;
  backward_done_ = false;
}

const DenseArray& Tape::value(Var v) const {
  const Node& n = node(v);
  if ((n.kind == OpKind::input || n.kind == OpKind::constant) && leaf_set_[v.id]) return values_[v.id];
  if (!forward_done_) throw Error("value: forward() has not been run on this tape");
  return values_[v.id];
}

const Shape& Tape::shape(Var v) const { return node(v).shape; }
OpKind Tape::kind(Var v) const { return node(v).kind; }

// ---------------------------------------------------------------------------
// Reverse sweep

void Tape::backprop_node(std::size_t id) {
  const Node& n = nodes_[id];
  const DenseArray& g = grads_[id];
  auto needs = [&](std::size_t k) { return nodes_[n.args[k]].needs_grad; };
  auto garg = [&](std::size_t k) -> DenseArray& { return grads_[n.args[k]]; };
  auto varg = [&](std::size_t k) -> const DenseArray& { return values_[n.args[k]]; };
  switch (n.kind) {
    case OpKind::input:
    case OpKind::constant:
      return;
    case OpKind::matmul: {
      if (needs(0)) as_matrix(garg(0)).noalias() += as_matrix(g) * as_matrix(varg(1)).transpose();
      if (needs(1)) as_matrix(garg(1)).noalias() += as_matrix(varg(0)).transpose() * as_matrix(g);
      return;
    }
    case OpKind::add: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        auto& d = garg(k).storage();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      return;
    }
    case OpKind::mul: {
      if (needs(0)) {
        auto& d = garg(0).storage();
        const auto& b = varg(1).storage();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * b[i];
      }
      if (needs(1)) {
        auto& d = garg(1).storage();
        const auto& a = varg(0).storage();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * a[i];
      }
      return;
    }
    case OpKind::relu: {
      auto& d = garg(0).storage();
      const auto& a = varg(0).storage();
      // Subgradient 0 at the kink.
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += a[i] > 0.0 ? g[i] : 0.0;
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      auto& d = garg(0).storage();
      const double s = n.kind == OpKind::sum ? g[0] : g[0] / static_cast<double>(d.size());
      for (double& v : d) v += s;
      return;
    }
    case OpKind::sum_axis: {
      DenseArray& d = garg(0);
      const std::size_t r = d.shape()[0], c = d.shape()[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += n.axis == 1 ? g[i] : g[j];
      return;
    }
    case OpKind::concat: {
      const std::size_t oc = n.shape[1];
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        const Shape& ps = nodes_[n.args[k]].shape;
        const std::size_t pr = ps[0], pc = ps[1];
        if (needs(k)) {
          DenseArray& d = garg(k);
          if (n.axis == 0) {
            for (std::size_t i = 0; i < pr * pc; ++i) d[i] += g[offset * oc + i];
          } else {
            for (std::size_t i = 0; i < pr; ++i)
              for (std::size_t j = 0; j < pc; ++j) d[i * pc + j] += g[i * oc + offset + j];
          }
        }
        offset += n.axis == 0 ? pr : pc;
      }
      return;
    }
    case OpKind::reshape: {
      auto& d = garg(0).storage();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      return;
    }
    case OpKind::gather: {
      auto& d = garg(0).storage();
      for (std::size_t k = 0; k < n.indices.size(); ++k) d[n.indices[k]] += g[k];
      return;
    }
  }
}

void Tape::backward(Var out, const DenseArray& seed) {
  if (!forward_done_) throw Error("backward: forward() must be run before backward()");
  const Node& no = node(out);
  if (seed.shape() != no.shape) shape_fail("backward", no.shape, seed.shape(), "seed shape mismatch");
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (grads_[id].shape() != nodes_[id].shape) {
      grads_[id] = DenseArray(nodes_[id].shape);
    } else {
      grads_[id].fill(0.0);
    }
  }
  for (std::size_t i = 0; i < seed.size(); ++i) grads_[out.id][i] = seed[i];
  for (std::size_t id = out.id + 1; id-- > 0;) {
    if (nodes_[id].needs_grad) backprop_node(id);
  }
  backward_done_ = true;
}

void Tape::backward(Var out) {
  const Shape& s = node(out).shape;
  if (shape_size(s) != 1) throw ShapeError("backward: implicit seed needs a scalar output, got " + shape_string(s));
  backward(out, DenseArray(s, 1.0));
}

const DenseArray& Tape::grad(Var v) const {
  node(v);
  if (!backward_done_) throw Error("grad: backward() has not been run on this tape");
  return grads_[v.id];
}

// ---------------------------------------------------------------------------
// Composites

Var scale(Tape& tape, Var a, double factor) {
  return tape.mul(a, tape.constant(tape.shape(a), factor));
}

Var sub(Tape& tape, Var a, Var b) { return tape.add(a, scale(tape, b, -1.0)); }

Var transpose(Tape& tape, Var a) {
  const Shape s = tape.shape(a);
  if (s.size() != 2) throw ShapeError("transpose: operand must be rank 2, got " + shape_string(s));
  const std::size_t r = s[0], c = s[1];
  std::vector<std::size_t> idx(r * c);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) idx[j * r + i] = i * c + j;
  return tape.gather(a, std::move(idx), {c, r});
}

Var broadcast_rows(Tape& tape, Var row, std::size_t rows) {
  Shape s = tape.shape(row);
  std::size_t c = 0;
  if (s.size() == 1) {
    c = s[0];
    row = tape.reshape(row, {1, c});
  } else if (s.size() == 2 && s[0] == 1) {
    c = s[1];
  } else {
    throw ShapeError("broadcast_rows: expected a row, got " + shape_string(s));
  }
  return tape.matmul(tape.constant({rows, 1}, 1.0), row);
}

DenseArray forward_eval(Tape& tape, std::span<const DenseArray> inputs, Var output) {
  auto declared = tape.inputs();
  if (inputs.size() != declared.size()) {
    throw ShapeError("forward_eval: tape declares " + std::to_string(declared.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) tape.set(declared[k], inputs[k]);
  tape.forward();
  return tape.value(output);
}

double finite_diff_check(const ScalarGraph& fn, const DenseArray& point, double step) {
  Tape tape;
  Var x = tape.input(point, "x");
  Var y = fn(tape, x);
  if (shape_size(tape.shape(y)) != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
  tape.forward();
  if (!std::isfinite(tape.value(y)[0])) throw NumericalError("finite_diff_check: non-finite function value");
  tape.backward(y);
  const DenseArray analytic = tape.grad(x);

  DenseArray probe = point;
  auto eval_at = [&](std::size_t i, double v) {
    probe[i] = v;
    tape.set(x, probe);
    tape.forward();
    const double r = tape.value(y)[0];
    if (!std::isfinite(r)) throw NumericalError("finite_diff_check: non-finite function value");
    return r;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    const double hi = x0 + step;
    const double lo = x0 - step;
    const double fp = eval_at(i, hi);
    const double fm = eval_at(i, lo);
    probe[i] = x0;
    const double central = (fp - fm) / (hi - lo);
    worst = std::max(worst, std::abs(analytic[i] - central) / (std::abs(central) + 1e-12));
  }
  return worst;
}

}  // namespace nkn::ad
