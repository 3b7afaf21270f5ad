#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nkn/autodiff.hpp"
#include "nkn/grid.hpp"
#include "nkn/model.hpp"

namespace nkn {

/// Differentiable forward pass of an OperatorModel recorded on one Tape.
///
/// Two layouts exist. The dense layout handles d = 1 with a sample-independent
/// kernel: the kernel is assembled once as an M x M matrix and all `batch`
/// samples advance together as the columns of an M x batch state. The edge
/// layout handles everything else one sample at a time, with the kernel
/// evaluated per neighborhood edge and contracted through gathers.
///
/// The graph is built once for a fixed (model shape, grid, depth, batch) and
/// reused: parameters and samples are swapped in through the leaves.
class OperatorGraph {
 public:
  enum class Mode {
    full,        ///< lift -> depth layers -> project (+ loss)
    single_layer ///< state leaf -> one layer; used for Jacobians
  };

  OperatorGraph(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd, std::size_t batch = 1,
                Mode mode = Mode::full);

  static bool dense_layout_applies(const OperatorModel& model);
  bool dense_layout() const { return dense_; }
  std::size_t batch() const { return batch_; }
  std::size_t depth() const { return depth_; }

  /// Copies parameter values (same shapes as at construction).
  void load_parameters(const OperatorModel& model);

  /// Raw (unnormalized) input fields, one per batch slot. Truths are
  /// optional; without them forward() returns 0.
  void load_batch(std::span<const std::span<const double>> inputs,
                  std::span<const std::span<const double>> truths = {});
  /// Single-layer mode: the state entering the layer, {M, d}, plus the sample
  /// field the kernel may depend on.
  void load_state(const ad::DenseArray& h, std::span<const double> field);

  /// Runs the tape; returns the summed relative squared error over the batch.
  double forward();
  void backward();
  /// Single-layer mode: reverse sweep seeded with `seed` on the layer output.
  void backward_from_output(const ad::DenseArray& seed);

  /// Denormalized predictions per batch slot (full mode).
  std::vector<std::vector<double>> predictions() const;
  /// Layer output in single-layer mode, {M, d}.
  ad::DenseArray layer_output() const;
  /// Gradient with respect to the state leaf in single-layer mode, {M, d}.
  ad::DenseArray state_gradient() const;

  /// grads[k] += dLoss/dparam_k, in parameters(model) order.
  void accumulate_gradients(std::vector<ad::DenseArray>& grads) const;
  std::size_t tape_size() const { return tape_.size(); }

 private:
  void build_parameters(const OperatorModel& model);
  void build_dense(const OperatorModel& model);
  void build_edge(const OperatorModel& model);
  ad::Var dense_layer(ad::Var h);
  ad::Var edge_layer(ad::Var h);
  void set_sample_constants(std::size_t slot, std::span<const double> field_normalized);

  ad::Tape tape_;
  const Grid* grid_;
  const Neighborhood* nbhd_;
  Variant variant_;
  KernelForm form_;
  Normalizer norm_;
  bool dense_;
  bool kernel_uses_field_;
  Mode mode_;
  std::size_t batch_;
  std::size_t depth_;
  std::size_t d_;
  std::size_t m_;
  double dt_;

  std::vector<ad::Var> params_;
  MLPVars kernel_vars_, reaction_vars_;
  ad::Var P_, p_, Q_, q_, c_, R_;

  // Shared per-pass quantities.
  ad::Var lift_inputs_;   ///< {M*batch, in} node-major (dense) or {M, in}
  ad::Var kernel_inputs_; ///< edge layout with field-dependent kernel
  ad::Var kernel_;        ///< dense: {M, M} weighted; edge: {E*d, d} or {E, 1}
  ad::Var coef_;          ///< dense NKN: {M, batch} rowsum + R
  ad::Var reaction_;      ///< edge NKN: {M*d, d} or {M, 1}
  ad::Var bias_field_;    ///< c broadcast to the state shape
  ad::Var state_in_;
  ad::Var state_out_;
  ad::Var prediction_;
  ad::Var truth_;
  ad::Var loss_weights_;
  ad::Var loss_;

  // Edge layout index tables.
  std::vector<std::size_t> src_idx_, dst_idx_, tile_idx_, slot_idx_, rtile_idx_;
  ad::Var edge_weights_;
  std::size_t edges_ = 0;
  std::size_t max_degree_ = 0;

  bool have_truth_ = false;
};

}  // namespace nkn
