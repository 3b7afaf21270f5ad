#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nkn/autodiff.hpp"
#include "nkn/grid.hpp"
#include "nkn/mlp.hpp"

namespace nkn {

enum class Variant { nkn, gkn };

/// Where the kernel and reaction come from: trainable MLPs, or the closed-form
/// Green's function of -u'' = f on [0,1] (the exact one-layer map).
enum class KernelForm { network, green };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

/// Lifting h(x,0) = P z(x) + p and projection u(x) = Q h(x,T) + q.
struct LiftProject {
  ad::DenseArray P;  ///< {d, lift_inputs}
  ad::DenseArray p;  ///< {d}
  ad::DenseArray Q;  ///< {out, d}
  ad::DenseArray q;  ///< {out}

  std::size_t feature_dim() const { return P.shape().at(0); }
  std::size_t input_dim() const { return P.shape().at(1); }
  std::size_t output_dim() const { return Q.shape().at(0); }
};

/// Affine normalization of model input and output fields. Identity by default.
struct Normalizer {
  double input_mean = 0.0;
  double input_std = 1.0;
  double output_mean = 0.0;
  double output_std = 1.0;
  bool operator==(const Normalizer&) const = default;
};

struct OperatorModel {
  Variant variant = Variant::nkn;
  KernelForm kernel_form = KernelForm::network;
  int spatial_dim = 1;
  std::size_t feature_dim = 1;
  std::size_t depth = 1;
  double horizon = 1.0;
  double radius = 2.0;
  /// Kernel sees (x, y, b(x), b(y)) instead of (x, y).
  bool kernel_uses_field = false;
  std::uint64_t seed = 0;
  /// Grid points per axis of the training data; 0 when unknown.
  std::size_t train_resolution = 0;

  LiftProject lift;
  MLPParams kernel;                ///< input -> d*d, row-major reshape
  MLPParams reaction;              ///< NKN only: x -> d*d
  ad::DenseArray reaction_matrix;  ///< GKN only: {d, d}
  ad::DenseArray bias;             ///< c, {d}
  Normalizer normalizer;

  double dt() const { return horizon / static_cast<double>(depth); }
  std::size_t kernel_input_dim() const;
  std::size_t lift_input_dim() const;
};

struct ModelSpec {
  Variant variant = Variant::nkn;
  int spatial_dim = 1;
  std::size_t feature_dim = 1;
  std::size_t depth = 1;
  double radius = 2.0;
  bool kernel_uses_field = false;
  /// Hidden widths only; input and output widths follow from the above.
  std::vector<std::size_t> kernel_hidden{256, 256};
  std::vector<std::size_t> reaction_hidden{64};
  std::uint64_t seed = 0;
};

/// Builds a freshly initialized model. Throws on invalid dimensions.
OperatorModel assemble_model(const ModelSpec& spec);

/// Non-learned 1D NKN with k = G(x,y) = min(x,y) - xy, R(x) = 1 - x(1-x)/2,
/// c = 0, L = 1, identity lift (h = f) and projection (u = h).
OperatorModel analytic_nkn_1d(const Grid& grid);

double green_function(double x, double y);
double green_reaction(double x);

/// Named views of every trainable array, in a fixed order.
struct ParamRef {
  std::string name;
  ad::DenseArray* array;
};
std::vector<ParamRef> parameters(OperatorModel& model);
std::vector<const ad::DenseArray*> parameters(const OperatorModel& model);

/// Kernel net + reaction net (or matrix) + P + p + Q + q + c.
std::size_t count_model_params(const OperatorModel& model);

// --- Features -------------------------------------------------------------

/// Reference Gaussian smoothing: truncated isotropic Gaussian of the given
/// variance (grid-index units) cut at 3 std, renormalized over in-domain taps.
std::vector<double> gaussian_smooth(const Grid& grid, std::span<const double> field, double variance = 5.0);
/// Central differences in the interior, one-sided at the boundary; returns
/// size() x dim, row-major.
std::vector<double> field_gradient(const Grid& grid, std::span<const double> field);

/// Per-node lift inputs z(x): 1D (x, f(x)); 2D (x1, x2, b, b_eps, d1 b_eps, d2 b_eps).
ad::DenseArray lift_features(const Grid& grid, std::span<const double> field);

/// h(x,0) = P z(x) + p for every node, shape {M, d}.
ad::DenseArray lift(std::span<const double> field, const Grid& grid, const LiftProject& lp);
ad::DenseArray lift_from_features(const ad::DenseArray& features, const LiftProject& lp);
/// u(x) = Q h(x) + q, shape {M, out}.
ad::DenseArray project(const ad::DenseArray& h, const LiftProject& lp);

/// Kernel input row for node pair (i, j).
void kernel_features(const Grid& grid, std::span<const double> field, bool uses_field, std::size_t i,
                     std::size_t j, std::span<double> out);

}  // namespace nkn
