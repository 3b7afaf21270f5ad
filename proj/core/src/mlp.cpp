#include "nkn/mlp.hpp"

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>

#include "nkn/error.hpp"

namespace nkn {

std::size_t mlp_param_count(std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) total += widths[l] * widths[l + 1] + widths[l + 1];
  return total;
}

std::size_t MLPParams::param_count() const { return mlp_param_count(widths); }

MLPParams mlp_init(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw Error("mlp_init: need at least an input and an output width");
  for (auto w : widths) {
    if (w == 0) throw Error("mlp_init: widths must be positive");
  }
  MLPParams p;
  p.widths.assign(widths.begin(), widths.end());
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double fan_in = static_cast<double>(widths[l]);
    const double fan_out = static_cast<double>(widths[l + 1]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    ad::DenseArray w({widths[l], widths[l + 1]});
    for (double& v : w.storage()) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(ad::Shape{widths[l + 1]}, 0.0);
  }
  return p;
}

MLPParams mlp_init(std::initializer_list<std::size_t> widths, std::uint64_t seed) {
  return mlp_init(std::span<const std::size_t>(widths.begin(), widths.size()), seed);
}

std::vector<double> mlp_forward(const MLPParams& params, std::span<const double> input) {
  if (params.empty()) throw Error("mlp_forward: empty network");
  if (input.size() != params.input_width()) {
    throw ShapeError("mlp_forward: input has length " + std::to_string(input.size()) + ", network expects " +
                     std::to_string(params.input_width()));
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t l = 0; l < params.layers(); ++l) {
    const std::size_t in = params.widths[l];
    const std::size_t out = params.widths[l + 1];
    std::vector<double> y(params.biases[l].storage());
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[i];
      for (std::size_t j = 0; j < out; ++j) y[j] += xi * params.weights[l][i * out + j];
    }
    if (l + 1 < params.layers()) {
      for (double& v : y) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(y);
  }
  return x;
}

ad::DenseArray mlp_forward_batch(const MLPParams& params, const ad::DenseArray& inputs) {
  if (params.empty()) throw Error("mlp_forward_batch: empty network");
  if (inputs.rank() != 2 || inputs.cols() != params.input_width()) {
    throw ShapeError("mlp_forward_batch: inputs " + ad::shape_string(inputs.shape()) + " do not match width " +
                     std::to_string(params.input_width()));
  }
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(inputs.rows());
  RowMatrix x = Eigen::Map<const RowMatrix>(inputs.storage().data(), rows, static_cast<Eigen::Index>(inputs.cols()));
  for (std::size_t l = 0; l < params.layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(params.widths[l]);
    const auto out = static_cast<Eigen::Index>(params.widths[l + 1]);
    Eigen::Map<const RowMatrix> w(params.weights[l].storage().data(), in, out);
    Eigen::Map<const Eigen::RowVectorXd> b(params.biases[l].storage().data(), out);
    RowMatrix y = x * w;
    y.rowwise() += b;
    if (l + 1 < params.layers()) y = y.cwiseMax(0.0);
    x = std::move(y);
  }
  ad::DenseArray result({inputs.rows(), params.output_width()});
  Eigen::Map<RowMatrix>(result.storage().data(), rows, static_cast<Eigen::Index>(params.output_width())) = x;
  return result;
}

MLPVars mlp_register(ad::Tape& tape, const MLPParams& params) {
  MLPVars v;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    v.weights.push_back(tape.input(params.weights[l], "W" + std::to_string(l)));
    v.biases.push_back(tape.input(params.biases[l], "b" + std::to_string(l)));
  }
  return v;
}

ad::Var mlp_on_tape(ad::Tape& tape, const MLPVars& vars, ad::Var inputs) {
  const std::size_t rows = tape.shape(inputs).at(0);
  ad::Var x = inputs;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    x = tape.add(tape.matmul(x, vars.weights[l]), ad::broadcast_rows(tape, vars.biases[l], rows));
    if (l + 1 < vars.weights.size()) x = tape.relu(x);
  }
  return x;
}

}  // namespace nkn
