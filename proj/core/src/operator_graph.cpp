#include "nkn/operator_graph.hpp"

#include <cmath>
#include <string>

#include "nkn/error.hpp"

namespace nkn {

using ad::DenseArray;
using ad::Var;

bool OperatorGraph::dense_layout_applies(const OperatorModel& model) {
  return model.feature_dim == 1 && !model.kernel_uses_field;
}

OperatorGraph::OperatorGraph(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd,
                             std::size_t batch, Mode mode)
    : grid_(&grid),
      nbhd_(&nbhd),
      variant_(model.variant),
      form_(model.kernel_form),
      norm_(model.normalizer),
      dense_(dense_layout_applies(model)),
      kernel_uses_field_(model.kernel_uses_field),
      mode_(mode),
      batch_(batch),
      depth_(model.depth),
      d_(model.feature_dim),
      m_(grid.size()),
      dt_(model.dt()) {
  if (batch == 0) throw Error("OperatorGraph: batch must be at least 1");
  if (nbhd.size() != grid.size()) throw ShapeError("OperatorGraph: neighborhood does not match grid");
  if (model.spatial_dim != grid.dim) {
    throw ShapeError("OperatorGraph: model is " + std::to_string(model.spatial_dim) + "D, grid is " +
                     std::to_string(grid.dim) + "D");
  }
  if (model.lift.input_dim() != model.lift_input_dim() || model.lift.feature_dim() != d_) {
    throw ShapeError("OperatorGraph: lift shape " + ad::shape_string(model.lift.P.shape()) +
                     " inconsistent with model dimensions");
  }
  if (form_ == KernelForm::green && (variant_ != Variant::nkn || d_ != 1 || grid.dim != 1)) {
    throw Error("OperatorGraph: the Green's-function kernel is defined for the scalar 1D NKN only");
  }
  if (!dense_ && batch_ != 1) throw Error("OperatorGraph: the edge layout processes one sample at a time");
  if (mode_ == Mode::single_layer && batch_ != 1) throw Error("OperatorGraph: single-layer mode needs batch 1");
  if (depth_ > 0 && (!(dt_ > 0.0) || !std::isfinite(dt_))) throw Error("OperatorGraph: invalid step size");

  build_parameters(model);
  if (dense_) {
    build_dense(model);
  } else {
    build_edge(model);
  }
}

void OperatorGraph::build_parameters(const OperatorModel& model) {
  auto refs = parameters(const_cast<OperatorModel&>(model));
  for (auto& r : refs) params_.push_back(tape_.input(*r.array, r.name));
  P_ = params_[0];
  p_ = params_[1];
  Q_ = params_[2];
  q_ = params_[3];
  c_ = params_[4];
  if (form_ == KernelForm::network) {
    std::size_t k = 5;
    for (std::size_t l = 0; l < model.kernel.layers(); ++l) {
      kernel_vars_.weights.push_back(params_[k++]);
      kernel_vars_.biases.push_back(params_[k++]);
    }
    if (variant_ == Variant::nkn) {
      for (std::size_t l = 0; l < model.reaction.layers(); ++l) {
        reaction_vars_.weights.push_back(params_[k++]);
        reaction_vars_.biases.push_back(params_[k++]);
      }
    } else {
      R_ = params_[k++];
    }
  }
}

void OperatorGraph::load_parameters(const OperatorModel& model) {
  auto refs = parameters(const_cast<OperatorModel&>(model));
  if (refs.size() != params_.size()) throw ShapeError("load_parameters: model has a different parameter layout");
  for (std::size_t k = 0; k < refs.size(); ++k) tape_.set(params_[k], *refs[k].array);
}

namespace {

DenseArray coordinate_matrix(const Grid& grid) {
  const auto s = static_cast<std::size_t>(grid.dim);
  return DenseArray({grid.size(), s}, grid.coords);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense layout: state {M, batch}, kernel {M, M}

void OperatorGraph::build_dense(const OperatorModel& model) {
  const std::size_t m = m_, s = batch_;
  const std::size_t kin = model.kernel_input_dim();

  DenseArray mask({m, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (auto j : nbhd_->neighbors(i)) mask.at(i, j) = grid_->weights[j];
  }
  Var raw;
  if (form_ == KernelForm::network) {
    DenseArray pairs({m * m, kin});
    std::vector<double> row(kin);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        kernel_features(*grid_, {}, false, i, j, row);
        for (std::size_t k = 0; k < kin; ++k) pairs.at(i * m + j, k) = row[k];
      }
    }
    raw = tape_.reshape(mlp_on_tape(tape_, kernel_vars_, tape_.constant(std::move(pairs))), {m, m});
  } else {
    DenseArray g({m, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) g.at(i, j) = green_function(grid_->coords[i], grid_->coords[j]);
    raw = tape_.constant(std::move(g));
  }
  kernel_ = tape_.mul(raw, tape_.constant(std::move(mask)));

  Var ones_row = tape_.constant({1, s}, 1.0);
  if (variant_ == Variant::nkn) {
    Var react;
    if (form_ == KernelForm::network) {
      react = mlp_on_tape(tape_, reaction_vars_, tape_.constant(coordinate_matrix(*grid_)));
    } else {
      DenseArray r({m, 1});
      for (std::size_t i = 0; i < m; ++i) r[i] = green_reaction(grid_->coords[i]);
      react = tape_.constant(std::move(r));
    }
    coef_ = tape_.matmul(tape_.add(tape_.sum_axis(kernel_, 1), react), ones_row);
  }
  bias_field_ = tape_.matmul(tape_.matmul(tape_.constant({m, 1}, 1.0), tape_.reshape(c_, {1, 1})), ones_row);

  Var h;
  if (mode_ == Mode::full) {
    lift_inputs_ = tape_.constant({m * s, model.lift_input_dim()}, 0.0);
    Var h0 = tape_.add(tape_.matmul(lift_inputs_, ad::transpose(tape_, P_)), ad::broadcast_rows(tape_, p_, m * s));
    h = tape_.reshape(h0, {m, s});
  } else {
    state_in_ = tape_.input(ad::Shape{m, 1}, "state");
    h = state_in_;
  }
  const std::size_t layers = mode_ == Mode::full ? depth_ : 1;
  for (std::size_t l = 0; l < layers; ++l) h = dense_layer(h);
  state_out_ = h;
  if (mode_ == Mode::single_layer) return;

  Var flat = tape_.reshape(h, {m * s, 1});
  Var u = tape_.add(tape_.matmul(flat, ad::transpose(tape_, Q_)), ad::broadcast_rows(tape_, q_, m * s));
  u = tape_.reshape(u, {m, s});
  prediction_ = tape_.add(ad::scale(tape_, u, norm_.output_std), tape_.constant({m, s}, norm_.output_mean));

  truth_ = tape_.constant({m, s}, 0.0);
  loss_weights_ = tape_.constant({m, s}, 0.0);
  Var diff = ad::sub(tape_, prediction_, truth_);
  loss_ = tape_.sum(tape_.mul(tape_.mul(diff, diff), loss_weights_));
}

Var OperatorGraph::dense_layer(Var h) {
  Var kh = tape_.matmul(kernel_, h);
  if (variant_ == Variant::nkn) {
    // h + dt (L_k h - R h + c), with L_k h = K h - rowsum(K) h
    Var rate = tape_.add(ad::sub(tape_, kh, tape_.mul(coef_, h)), bias_field_);
    return tape_.add(h, ad::scale(tape_, rate, dt_));
  }
  const auto& s = tape_.shape(h);
  Var rh = tape_.reshape(tape_.matmul(tape_.reshape(h, {s[0] * s[1], 1}), tape_.reshape(R_, {1, 1})), s);
  return tape_.relu(tape_.add(tape_.add(rh, kh), bias_field_));
}

// ---------------------------------------------------------------------------
// Edge layout: state {M, d}, kernel per CSR edge

void OperatorGraph::build_edge(const OperatorModel& model) {
  const std::size_t m = m_, d = d_;
  const Neighborhood& nb = *nbhd_;
  edges_ = nb.edge_count();
  max_degree_ = nb.max_degree();
  const std::size_t e_count = edges_;

  std::vector<std::size_t> owner(e_count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t e = nb.offsets[i]; e < nb.offsets[i + 1]; ++e) owner[e] = i;

  src_idx_.resize(e_count * d);
  dst_idx_.resize(e_count * d);
  for (std::size_t e = 0; e < e_count; ++e) {
    for (std::size_t b = 0; b < d; ++b) {
      src_idx_[e * d + b] = nb.indices[e] * d + b;
      dst_idx_[e * d + b] = owner[e] * d + b;
    }
  }
  if (d > 1) {
    tile_idx_.resize(e_count * d * d);
    for (std::size_t e = 0; e < e_count; ++e)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) tile_idx_[(e * d + a) * d + b] = e * d + b;
    rtile_idx_.resize(m * d * d);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) rtile_idx_[(i * d + a) * d + b] = i * d + b;
  }
  // Row (i, a) of the slot table lists the edge contributions of node i's
  // neighbors; missing slots point at an appended zero.
  const std::size_t zero_slot = e_count * d;
  slot_idx_.assign(m * d * max_degree_, zero_slot);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < nb.degree(i); ++s)
      for (std::size_t a = 0; a < d; ++a)
        slot_idx_[(i * d + a) * max_degree_ + s] = (nb.offsets[i] + s) * d + a;

  DenseArray ew({e_count * d, 1});
  for (std::size_t e = 0; e < e_count; ++e)
    for (std::size_t a = 0; a < d; ++a) ew[e * d + a] = grid_->weights[nb.indices[e]];
  edge_weights_ = tape_.constant(std::move(ew));

  if (form_ == KernelForm::network) {
    const std::size_t kin = model.kernel_input_dim();
    DenseArray feats({e_count, kin});
    if (!kernel_uses_field_) {
      std::vector<double> row(kin);
      for (std::size_t e = 0; e < e_count; ++e) {
        kernel_features(*grid_, {}, false, owner[e], nb.indices[e], row);
        for (std::size_t k = 0; k < kin; ++k) feats.at(e, k) = row[k];
      }
    }
    kernel_inputs_ = tape_.constant(std::move(feats));
    Var k = mlp_on_tape(tape_, kernel_vars_, kernel_inputs_);
    kernel_ = d > 1 ? tape_.reshape(k, {e_count * d, d}) : k;
  } else {
    DenseArray g({e_count, 1});
    for (std::size_t e = 0; e < e_count; ++e)
      g[e] = green_function(grid_->coords[owner[e]], grid_->coords[nb.indices[e]]);
    kernel_ = tape_.constant(std::move(g));
  }

  if (variant_ == Variant::nkn) {
    if (form_ == KernelForm::network) {
      Var r = mlp_on_tape(tape_, reaction_vars_, tape_.constant(coordinate_matrix(*grid_)));
      reaction_ = d > 1 ? tape_.reshape(r, {m * d, d}) : r;
    } else {
      DenseArray r({m, 1});
      for (std::size_t i = 0; i < m; ++i) r[i] = green_reaction(grid_->coords[i]);
      reaction_ = tape_.constant(std::move(r));
    }
  } else {
    reaction_ = ad::transpose(tape_, R_);
  }
  bias_field_ = ad::broadcast_rows(tape_, c_, m);

  Var h;
  if (mode_ == Mode::full) {
    lift_inputs_ = tape_.constant({m, model.lift_input_dim()}, 0.0);
    h = tape_.add(tape_.matmul(lift_inputs_, ad::transpose(tape_, P_)), ad::broadcast_rows(tape_, p_, m));
  } else {
    state_in_ = tape_.input(ad::Shape{m, d}, "state");
    h = state_in_;
  }
  const std::size_t layers = mode_ == Mode::full ? depth_ : 1;
  for (std::size_t l = 0; l < layers; ++l) h = edge_layer(h);
  state_out_ = h;
  if (mode_ == Mode::single_layer) return;

  Var u = tape_.add(tape_.matmul(h, ad::transpose(tape_, Q_)), ad::broadcast_rows(tape_, q_, m));
  prediction_ = tape_.add(ad::scale(tape_, u, norm_.output_std), tape_.constant({m, 1}, norm_.output_mean));
  truth_ = tape_.constant({m, 1}, 0.0);
  loss_weights_ = tape_.constant({m, 1}, 0.0);
  Var diff = ad::sub(tape_, prediction_, truth_);
  loss_ = tape_.sum(tape_.mul(tape_.mul(diff, diff), loss_weights_));
}

Var OperatorGraph::edge_layer(Var h) {
  const std::size_t m = m_, d = d_, e_count = edges_;
  Var src = tape_.gather(h, src_idx_, {e_count, d});
  Var operand = src;
  if (variant_ == Variant::nkn) operand = ad::sub(tape_, src, tape_.gather(h, dst_idx_, {e_count, d}));

  Var contrib;
  if (d > 1) {
    Var tiled = tape_.gather(operand, tile_idx_, {e_count * d, d});
    contrib = tape_.sum_axis(tape_.mul(kernel_, tiled), 1);
  } else {
    contrib = tape_.mul(kernel_, operand);
  }
  contrib = tape_.mul(contrib, edge_weights_);
  Var padded = tape_.concat({contrib, tape_.constant({1, 1}, 0.0)}, 0);
  Var integral = tape_.reshape(tape_.sum_axis(tape_.gather(padded, slot_idx_, {m * d, max_degree_}), 1), {m, d});

  if (variant_ == Variant::nkn) {
    Var rh;
    if (d > 1) {
      Var tiled = tape_.gather(h, rtile_idx_, {m * d, d});
      rh = tape_.reshape(tape_.sum_axis(tape_.mul(reaction_, tiled), 1), {m, d});
    } else {
      rh = tape_.mul(reaction_, h);
    }
    Var rate = tape_.add(ad::sub(tape_, integral, rh), bias_field_);
    return tape_.add(h, ad::scale(tape_, rate, dt_));
  }
  Var rh = tape_.matmul(h, reaction_);
  return tape_.relu(tape_.add(tape_.add(rh, integral), bias_field_));
}

// ---------------------------------------------------------------------------

void OperatorGraph::set_sample_constants(std::size_t slot, std::span<const double> field) {
  if (mode_ == Mode::full) {
    DenseArray z = lift_features(*grid_, field);
    if (dense_) {
      DenseArray all = tape_.value(lift_inputs_);
      const std::size_t in = z.cols();
      for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t k = 0; k < in; ++k) all.at(i * batch_ + slot, k) = z.at(i, k);
      tape_.set(lift_inputs_, std::move(all));
    } else {
      tape_.set(lift_inputs_, std::move(z));
    }
  }
  if (!dense_ && kernel_uses_field_ && form_ == KernelForm::network) {
    DenseArray feats = tape_.value(kernel_inputs_);
    const std::size_t kin = feats.cols();
    std::vector<double> row(kin);
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t e = nbhd_->offsets[i]; e < nbhd_->offsets[i + 1]; ++e) {
        kernel_features(*grid_, field, true, i, nbhd_->indices[e], row);
        for (std::size_t k = 0; k < kin; ++k) feats.at(e, k) = row[k];
      }
    }
    tape_.set(kernel_inputs_, std::move(feats));
  }
}

void OperatorGraph::load_batch(std::span<const std::span<const double>> inputs,
                               std::span<const std::span<const double>> truths) {
  if (mode_ != Mode::full) throw Error("load_batch: graph is in single-layer mode");
  if (inputs.size() != batch_) {
    throw ShapeError("load_batch: graph holds " + std::to_string(batch_) + " samples, got " +
                     std::to_string(inputs.size()));
  }
  if (!truths.empty() && truths.size() != batch_) throw ShapeError("load_batch: truth count does not match inputs");
  std::vector<double> normalized(m_);
  for (std::size_t s = 0; s < batch_; ++s) {
    if (inputs[s].size() != m_) {
      throw ShapeError("load_batch: input field has " + std::to_string(inputs[s].size()) + " values, grid has " +
                       std::to_string(m_));
    }
    for (std::size_t i = 0; i < m_; ++i) normalized[i] = (inputs[s][i] - norm_.input_mean) / norm_.input_std;
    set_sample_constants(s, normalized);
  }
  have_truth_ = !truths.empty();
  if (!have_truth_) return;

  const std::size_t cols = dense_ ? batch_ : 1;
  DenseArray truth({m_, cols});
  DenseArray weights({m_, cols});
  for (std::size_t s = 0; s < batch_; ++s) {
    if (truths[s].size() != m_) throw ShapeError("load_batch: truth field does not match grid");
    double norm2 = 0.0;
    for (double v : truths[s]) norm2 += v * v;
    if (!(norm2 > 0.0)) throw NumericalError("load_batch: reference field has zero norm");
    for (std::size_t i = 0; i < m_; ++i) {
      truth.at(i, s) = truths[s][i];
      weights.at(i, s) = 1.0 / norm2;
    }
  }
  tape_.set(truth_, std::move(truth));
  tape_.set(loss_weights_, std::move(weights));
}

void OperatorGraph::load_state(const DenseArray& h, std::span<const double> field) {
  if (mode_ != Mode::single_layer) throw Error("load_state: graph is not in single-layer mode");
  tape_.set(state_in_, h);
  if (kernel_uses_field_) {
    if (field.size() != m_) throw ShapeError("load_state: field does not match grid");
    std::vector<double> normalized(m_);
    for (std::size_t i = 0; i < m_; ++i) normalized[i] = (field[i] - norm_.input_mean) / norm_.input_std;
    set_sample_constants(0, normalized);
  }
}

double OperatorGraph::forward() {
  tape_.forward();
  const DenseArray& out = tape_.value(state_out_);
  if (!out.all_finite()) throw NumericalError("OperatorGraph: non-finite layer output");
  if (mode_ == Mode::full && have_truth_) return tape_.value(loss_)[0];
  return 0.0;
}

void OperatorGraph::backward() {
  if (mode_ != Mode::full || !have_truth_) throw Error("backward: no loss recorded (load truths first)");
  tape_.backward(loss_);
}

void OperatorGraph::backward_from_output(const DenseArray& seed) { tape_.backward(state_out_, seed); }

std::vector<std::vector<double>> OperatorGraph::predictions() const {
  if (mode_ != Mode::full) throw Error("predictions: graph is in single-layer mode");
  const DenseArray& u = tape_.value(prediction_);
  std::vector<std::vector<double>> out(batch_, std::vector<double>(m_));
  const std::size_t cols = u.cols();
  for (std::size_t s = 0; s < batch_; ++s)
    for (std::size_t i = 0; i < m_; ++i) out[s][i] = u[i * cols + s];
  return out;
}

DenseArray OperatorGraph::layer_output() const { return tape_.value(state_out_); }

DenseArray OperatorGraph::state_gradient() const { return tape_.grad(state_in_); }

void OperatorGraph::accumulate_gradients(std::vector<DenseArray>& grads) const {
  if (grads.size() != params_.size()) throw ShapeError("accumulate_gradients: gradient list has wrong length");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const DenseArray& g = tape_.grad(params_[k]);
    auto& dst = grads[k].storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

}  // namespace nkn
