#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nkn/grid.hpp"
#include "nkn/model.hpp"

namespace nkn {

/// Mean and standard deviation of one field over all samples and nodes.
/// A constant field keeps std = 1 and sets `degenerate`.
struct FieldStats {
  double mean = 0.0;
  double std = 1.0;
  bool degenerate = false;
  bool operator==(const FieldStats&) const = default;
};

/// Paired input/output fields on a shared uniform grid, sample-major.
struct Dataset {
  std::string generator;  ///< "poisson1d" or "darcy2d"
  std::uint64_t seed = 0;
  int dim = 1;
  std::size_t n = 0;
  std::size_t samples = 0;
  std::string input_name = "input";
  std::string output_name = "output";
  std::vector<double> input;   ///< samples x nodes
  std::vector<double> output;  ///< samples x nodes
  FieldStats input_stats, output_stats;
  std::map<std::string, std::string> provenance;

  std::size_t nodes() const;
  std::span<const double> input_sample(std::size_t j) const;
  std::span<const double> output_sample(std::size_t j) const;
};

FieldStats field_stats(std::span<const double> values);
/// Normalizer with the input/output statistics of `train`.
Normalizer normalizer_from(const Dataset& train);
/// Copy with both fields standardized; the stats used are in the result.
Dataset normalize(const Dataset& ds);
std::vector<double> denormalize(std::span<const double> values, const FieldStats& stats);
/// Samples [begin, begin + count).
Dataset subset(const Dataset& ds, std::size_t begin, std::size_t count);

// --- 1D Poisson -------------------------------------------------------------

inline constexpr std::size_t kPoissonModes = 100;

/// Cosine coefficients u_0..u_100 of sample j: u_k ~ U[0, exp(-0.1 k^2)] for
/// k >= 1 and u_0 = -sum_{k>=1} u_k. Independent of the grid.
std::vector<double> poisson_coefficients(std::uint64_t seed, std::size_t j);

/// u = sum_k u_k cos(2 pi k x), f = -u'' evaluated analytically. Input field
/// is f, output field is u.
Dataset gen_poisson_1d(std::size_t n_samples, const Grid& grid, std::uint64_t seed);

/// u_i = sum_j w_j G(x_i, x_j) f_j.
std::vector<double> green_integral_solve(std::span<const double> f, const Grid& grid);

// --- 2D Darcy ---------------------------------------------------------------

inline constexpr std::size_t kGrfModes = 64;
inline constexpr std::size_t kDarcyFineGrid = 241;

/// Sine-series coefficients xi_{k1,k2} ~ N(0, (pi^2 |k|^2 + 9)^-2), k = 1..64,
/// as a 64 x 64 row-major matrix.
std::vector<double> grf_coefficients(std::uint64_t seed, std::size_t j = 0);
/// g(x) = sum xi_k sin(pi k1 x1) sin(pi k2 x2) on the n x n grid.
std::vector<double> grf_evaluate(std::span<const double> coefficients, std::size_t n);
/// 12 where g >= 0, 3 elsewhere.
std::vector<double> threshold_permeability(std::span<const double> g);
std::vector<double> grf_darcy_permeability(std::uint64_t seed, std::size_t n = kDarcyFineGrid, std::size_t j = 0);

struct DarcySolution {
  std::vector<double> u;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// -div(b grad u) = f, u = 0 on the boundary, five-point flux scheme with
/// harmonic face averages, Jacobi-preconditioned CG to `tolerance` in the
/// relative residual. Throws NumericalError after `max_iterations`.
DarcySolution fd_solve_darcy(std::span<const double> b, std::span<const double> f, std::size_t n,
                             double tolerance = 1e-10, std::size_t max_iterations = 0);
/// Residual of the same discrete operator, for checking a solve.
std::vector<double> darcy_residual(std::span<const double> b, std::span<const double> f,
                                   std::span<const double> u, std::size_t n);

/// Strided subsampling of an n_from x n_from field.
std::vector<double> downsample(std::span<const double> field, std::size_t n_from, std::size_t n_to);

/// Samples on the fine grid, solved with f = 1 and subsampled to each target
/// resolution. Input field is b, output is u.
std::vector<Dataset> gen_darcy_2d(std::size_t n_samples, std::uint64_t seed, std::span<const std::size_t> targets,
                                  std::size_t n_fine = kDarcyFineGrid);

// --- Files ------------------------------------------------------------------

/// Writes <dir>/<name>.meta.json and <dir>/<name>.<field>.f64.
void save_dataset(const Dataset& ds, const std::string& dir, const std::string& name);
Dataset load_dataset(const std::string& dir, const std::string& name);
/// FNV-1a over both fields' little-endian bytes.
std::uint64_t dataset_hash(const Dataset& ds);

void write_f64_file(const std::string& path, std::span<const double> values);
std::vector<double> read_f64_file(const std::string& path);

}  // namespace nkn
