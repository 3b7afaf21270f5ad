#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nkn/autodiff.hpp"
#include "nkn/grid.hpp"
#include "nkn/model.hpp"

namespace nkn {

/// Writes the d x d kernel matrix k(x_i, x_j), row-major, into `out`.
using KernelEval = std::function<void(std::size_t i, std::size_t j, std::span<double> out)>;

/// out_i = sum_{j in N(i)} w_j k(x_i, x_j) (h_j - h_i). `h` is {M, d}.
ad::DenseArray nonlocal_laplacian(const ad::DenseArray& h, const KernelEval& kernel, const Neighborhood& nbhd,
                                  const Grid& grid);

/// Kernel and reaction values of a model on one grid for one sample, laid
/// out per CSR edge (E x d*d) and per node (M x d*d). GKN leaves `reaction`
/// empty and uses the model's reaction matrix.
struct KernelTables {
  std::size_t d = 1;
  std::vector<double> kernel;
  std::vector<double> reaction;
};

/// `field` is the normalized input field; ignored unless the kernel uses it.
KernelTables evaluate_kernels(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd,
                              std::span<const double> field = {});

/// h + dt (L_k[h] - R h + c). Throws NumericalError naming `layer` on a
/// non-finite result.
ad::DenseArray nkn_layer(const ad::DenseArray& h, const OperatorModel& model, const KernelTables& tables,
                         const Grid& grid, const Neighborhood& nbhd, std::size_t layer = 0);
/// ReLU(R h + sum_j w_j k_ij h_j + c).
ad::DenseArray gkn_layer(const ad::DenseArray& h, const OperatorModel& model, const KernelTables& tables,
                         const Grid& grid, const Neighborhood& nbhd, std::size_t layer = 0);

/// Raw input field in, denormalized prediction out. Runs on the tape.
std::vector<double> model_forward(const OperatorModel& model, std::span<const double> field, const Grid& grid,
                                  const Neighborhood& nbhd);
/// Same map by direct loops, independent of the tape.
std::vector<double> model_forward_reference(const OperatorModel& model, std::span<const double> field,
                                            const Grid& grid, const Neighborhood& nbhd);
/// Lifted state h(., 0) by direct loops, {M, d}.
ad::DenseArray lifted_state(const OperatorModel& model, std::span<const double> field, const Grid& grid);

/// Smallest weighted Rayleigh quotient (eta, (-L_k + R) eta)_w / (eta, eta)_w
/// over `trials` Gaussian random fields. Scalar NKN models only.
double estimate_coercivity(const OperatorModel& model, const Grid& grid, const Neighborhood& nbhd,
                           std::size_t trials, std::uint64_t seed);

}  // namespace nkn
