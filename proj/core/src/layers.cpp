#include "nkn/layers.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "nkn/error.hpp"
#include "nkn/operator_graph.hpp"

namespace nkn {

using ad::DenseArray;

DenseArray nonlocal_laplacian(const DenseArray& h, const KernelEval& kernel, const Neighborhood& nbhd,
                              const Grid& grid) {
  if (h.rank() != 2 || h.rows() != grid.size() || nbhd.size() != grid.size()) {
    throw ShapeError("nonlocal_laplacian: field " + ad::shape_string(h.shape()) + " does not match grid of " +
                     std::to_string(grid.size()) + " nodes");
  }
  const std::size_t m = h.rows(), d = h.cols();
  DenseArray out({m, d}, 0.0);
  std::vector<double> k(d * d);
  for (std::size_t i = 0; i < m; ++i) {
    for (auto j : nbhd.neighbors(i)) {
      kernel(i, j, k);
      const double w = grid.weights[j];
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b) s += k[a * d + b] * (h.at(j, b) - h.at(i, b));
        out.at(i, a) += w * s;
      }
    }
  }
  return out;
}

KernelTables evaluate_kernels(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd,
                              std::span<const double> field) {
  const std::size_t d = model.feature_dim, m = grid.size(), e_count = nbhd.edge_count();
  KernelTables t;
  t.d = d;
  if (model.kernel_form == KernelForm::green) {
    t.kernel.resize(e_count);
    t.reaction.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      t.reaction[i] = green_reaction(grid.coords[i]);
      for (std::size_t e = nbhd.offsets[i]; e < nbhd.offsets[i + 1]; ++e)
        t.kernel[e] = green_function(grid.coords[i], grid.coords[nbhd.indices[e]]);
    }
    return t;
  }
  if (model.kernel_uses_field && field.size() != m) throw ShapeError("evaluate_kernels: field does not match grid");

  const std::size_t kin = model.kernel_input_dim();
  DenseArray feats({e_count, kin});
  std::vector<double> row(kin);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t e = nbhd.offsets[i]; e < nbhd.offsets[i + 1]; ++e) {
      kernel_features(grid, field, model.kernel_uses_field, i, nbhd.indices[e], row);
      for (std::size_t k = 0; k < kin; ++k) feats.at(e, k) = row[k];
    }
  }
  t.kernel = mlp_forward_batch(model.kernel, feats).storage();
  if (model.variant == Variant::nkn) {
    DenseArray coords({m, static_cast<std::size_t>(grid.dim)}, grid.coords);
    t.reaction = mlp_forward_batch(model.reaction, coords).storage();
  }
  return t;
}

namespace {

void check_finite(const DenseArray& h, const char* what, std::size_t layer) {
  if (!h.all_finite()) throw NumericalError(std::string(what) + ": non-finite update at layer " + std::to_string(layer));
}

/// sum_j w_j k_ij x_j with x either h_j or h_j - h_i.
DenseArray kernel_integral(const DenseArray& h, const KernelTables& t, const Grid& grid, const Neighborhood& nbhd,
                           bool difference) {
  const std::size_t m = h.rows(), d = t.d;
  DenseArray out({m, d}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t e = nbhd.offsets[i]; e < nbhd.offsets[i + 1]; ++e) {
      const std::size_t j = nbhd.indices[e];
      const double w = grid.weights[j];
      const double* k = t.kernel.data() + e * d * d;
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b) s += k[a * d + b] * (difference ? h.at(j, b) - h.at(i, b) : h.at(j, b));
        out.at(i, a) += w * s;
      }
    }
  }
  return out;
}

void check_layer_shapes(const DenseArray& h, const OperatorModel& model, const Grid& grid) {
  if (h.rank() != 2 || h.rows() != grid.size() || h.cols() != model.feature_dim) {
    throw ShapeError("layer: state " + ad::shape_string(h.shape()) + " does not match grid and feature dimension");
  }
}

}  // namespace

DenseArray nkn_layer(const DenseArray& h, const OperatorModel& model, const KernelTables& tables, const Grid& grid,
                     const Neighborhood& nbhd, std::size_t layer) {
  if (model.variant != Variant::nkn) throw Error("nkn_layer: model is not an NKN");
  check_layer_shapes(h, model, grid);
  const std::size_t m = h.rows(), d = model.feature_dim;
  const double dt = model.dt();
  DenseArray lap = kernel_integral(h, tables, grid, nbhd, true);
  DenseArray out = h;
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = tables.reaction.data() + i * d * d;
    for (std::size_t a = 0; a < d; ++a) {
      double rh = 0.0;
      for (std::size_t b = 0; b < d; ++b) rh += r[a * d + b] * h.at(i, b);
      out.at(i, a) += dt * (lap.at(i, a) - rh + model.bias[a]);
    }
  }
  check_finite(out, "nkn_layer", layer);
  return out;
}

DenseArray gkn_layer(const DenseArray& h, const OperatorModel& model, const KernelTables& tables, const Grid& grid,
                     const Neighborhood& nbhd, std::size_t layer) {
  if (model.variant != Variant::gkn) throw Error("gkn_layer: model is not a GKN");
  check_layer_shapes(h, model, grid);
  const std::size_t m = h.rows(), d = model.feature_dim;
  DenseArray out = kernel_integral(h, tables, grid, nbhd, false);
  const DenseArray& r = model.reaction_matrix;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      double v = out.at(i, a) + model.bias[a];
      for (std::size_t b = 0; b < d; ++b) v += r[a * d + b] * h.at(i, b);
      out.at(i, a) = v > 0.0 ? v : 0.0;
    }
  }
  check_finite(out, "gkn_layer", layer);
  return out;
}

namespace {

std::vector<double> normalized_input(const OperatorModel& model, std::span<const double> field) {
  std::vector<double> out(field.begin(), field.end());
  for (double& v : out) v = (v - model.normalizer.input_mean) / model.normalizer.input_std;
  return out;
}

}  // namespace

DenseArray lifted_state(const OperatorModel& model, std::span<const double> field, const Grid& grid) {
  return lift(normalized_input(model, field), grid, model.lift);
}

std::vector<double> model_forward(const OperatorModel& model, std::span<const double> field, const Grid& grid,
                                  const Neighborhood& nbhd) {
  OperatorGraph graph(model, grid, nbhd, 1);
  std::span<const double> inputs[] = {field};
  graph.load_batch(inputs);
  graph.forward();
  return graph.predictions().front();
}

std::vector<double> model_forward_reference(const OperatorModel& model, std::span<const double> field,
                                            const Grid& grid, const Neighborhood& nbhd) {
  const auto b = normalized_input(model, field);
  DenseArray h = lift(b, grid, model.lift);
  const KernelTables tables = evaluate_kernels(model, grid, nbhd, b);
  for (std::size_t l = 0; l < model.depth; ++l) {
    h = model.variant == Variant::nkn ? nkn_layer(h, model, tables, grid, nbhd, l)
                                      : gkn_layer(h, model, tables, grid, nbhd, l);
  }
  DenseArray u = project(h, model.lift);
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    out[i] = model.normalizer.output_std * u[i] + model.normalizer.output_mean;
  return out;
}

double estimate_coercivity(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd,
                           std::size_t trials, std::uint64_t seed) {
  if (model.variant != Variant::nkn || model.feature_dim != 1) {
    throw Error("estimate_coercivity: defined for scalar NKN models only");
  }
  if (model.kernel_uses_field) throw Error("estimate_coercivity: kernel must not depend on the sample");
  if (trials == 0) throw Error("estimate_coercivity: need at least one trial");
  const KernelTables t = evaluate_kernels(model, grid, nbhd);
  const std::size_t m = grid.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eta(m);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (double& v : eta) v = normal(rng);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double lap = 0.0;
      for (std::size_t e = nbhd.offsets[i]; e < nbhd.offsets[i + 1]; ++e) {
        const std::size_t j = nbhd.indices[e];
        lap += grid.weights[j] * t.kernel[e] * (eta[j] - eta[i]);
      }
      num += grid.weights[i] * eta[i] * (t.reaction[i] * eta[i] - lap);
      den += grid.weights[i] * eta[i] * eta[i];
    }
    best = std::min(best, num / den);
  }
  return best;
}

}  // namespace nkn
