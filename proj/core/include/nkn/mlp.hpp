#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nkn/autodiff.hpp"

namespace nkn {

/// Feed-forward ReLU network: affine, ReLU, affine, ..., affine.
/// weights[l] has shape {widths[l], widths[l+1]} (input-major, so a batch
/// X of shape {N, widths[l]} maps through X * W + 1 b); biases[l] has shape
/// {widths[l+1]}.
struct MLPParams {
  std::vector<std::size_t> widths;
  std::vector<ad::DenseArray> weights;
  std::vector<ad::DenseArray> biases;
  std::uint64_t seed = 0;

  std::size_t layers() const { return weights.size(); }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t param_count() const;
  bool empty() const { return widths.empty(); }
};

/// Closed-form count sum_l (w_l * w_{l+1} + w_{l+1}).
std::size_t mlp_param_count(std::span<const std::size_t> widths);

/// Glorot-uniform weights, zero biases. Deterministic for a fixed seed.
MLPParams mlp_init(std::span<const std::size_t> widths, std::uint64_t seed);
MLPParams mlp_init(std::initializer_list<std::size_t> widths, std::uint64_t seed);

std::vector<double> mlp_forward(const MLPParams& params, std::span<const double> input);

/// Row-wise forward of a batch {N, widths.front()} -> {N, widths.back()}.
ad::DenseArray mlp_forward_batch(const MLPParams& params, const ad::DenseArray& inputs);

/// Tape handles for an MLP's parameters, in weights/biases layer order.
struct MLPVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

MLPVars mlp_register(ad::Tape& tape, const MLPParams& params);
/// Records the forward pass of a batch {N, in} on the tape.
ad::Var mlp_on_tape(ad::Tape& tape, const MLPVars& vars, ad::Var inputs);

}  // namespace nkn
