#pragma once

// Dense arrays and a define-then-run reverse-mode tape.
//
// The primitive set is closed: matmul, add, elementwise multiply, ReLU,
// sum / per-axis sum / mean reductions, concatenation, reshape and flat
// gather. There is no broadcasting; callers tile explicitly (a bias row is
// broadcast with a ones-column matmul, a transpose is a gather).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nkn::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Row-major array of doubles with an explicit shape.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(Shape shape, double fill = 0.0);
  DenseArray(Shape shape, std::vector<double> values);

  static DenseArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static DenseArray vector(std::vector<double> values);
  static DenseArray scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Extents of a rank-2 array. Throws ShapeError for other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  void fill(double v);
  DenseArray reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class OpKind : std::uint8_t {
  input,
  constant,
  matmul,
  add,
  mul,
  relu,
  sum,
  sum_axis,
  mean,
  concat,
  reshape,
  gather,
};

const char* op_name(OpKind kind);

/// Records a computation graph whose shapes are checked when ops are added
/// and whose values are computed by forward(). backward() accumulates
/// gradients in reverse creation order. A tape is single-owner.
class Tape {
 public:
  /// A leaf whose value is supplied later via set(); gradients are tracked.
  Var input(Shape shape, std::string name = {});
  /// A leaf with an initial value; gradients are tracked.
  Var input(DenseArray value, std::string name = {});
  /// A leaf that never receives a gradient.
  Var constant(DenseArray value);
  Var constant(Shape shape, double fill);

  void set(Var leaf, DenseArray value);
  void set(Var leaf, std::span<const double> values);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var relu(Var a);
  /// Sum of all elements, shape {1}.
  Var sum(Var a);
  /// Rank-2 reduction: axis 1 gives rows x 1, axis 0 gives 1 x cols.
  Var sum_axis(Var a, std::size_t axis);
  Var mean(Var a);
  /// Rank-2 concatenation along axis 0 (stack rows) or 1 (stack columns).
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var concat(std::initializer_list<Var> parts, std::size_t axis);
  Var reshape(Var a, Shape shape);
  /// out.flat[k] = a.flat[indices[k]], out has the given shape.
  Var gather(Var a, std::vector<std::size_t> indices, Shape shape);

  void forward();
  /// Seeds d(out) with `seed` (same shape as out) and runs the reverse sweep.
  void backward(Var out, const DenseArray& seed);
  /// Scalar output, seed 1.
  void backward(Var out);

  bool forward_done() const { return forward_done_; }
  const DenseArray& value(Var v) const;
  /// Gradient of the last backward() output with respect to v. Zero when v
  /// does not influence the output.
  const DenseArray& grad(Var v) const;
  const Shape& shape(Var v) const;
  OpKind kind(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  std::span<const Var> inputs() const { return inputs_; }

 private:
  struct Node {
    OpKind kind;
    Shape shape;
    std::vector<std::uint32_t> args;
    std::vector<std::size_t> indices;
    std::size_t axis = 0;
    bool needs_grad = false;
    std::string name;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void eval_node(std::size_t id);
  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<DenseArray> values_;
  std::vector<DenseArray> grads_;
  std::vector<Var> inputs_;
  std::vector<bool> leaf_set_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

// Composite helpers built from the primitives above.
Var scale(Tape& tape, Var a, double factor);
Var sub(Tape& tape, Var a, Var b);
Var transpose(Tape& tape, Var a);
/// Broadcasts a {1, c} or {c} row to {rows, c} through a ones-column matmul.
Var broadcast_rows(Tape& tape, Var row, std::size_t rows);

/// Sets the tape's inputs (in declaration order), runs forward and returns
/// the value of `output`.
DenseArray forward_eval(Tape& tape, std::span<const DenseArray> inputs, Var output);

/// Builds a scalar function of one array on a fresh tape.
using ScalarGraph = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central| / (|central| + 1e-12).
double finite_diff_check(const ScalarGraph& fn, const DenseArray& point, double step);

}  // namespace nkn::ad
