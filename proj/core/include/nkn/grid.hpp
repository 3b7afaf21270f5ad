#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nkn {

/// Uniform tensor grid on [0,1]^dim with trapezoid quadrature weights.
///
/// Nodes are ordered lexicographically with the last axis fastest, so in 2D
/// node (i0, i1) has index i0 * n + i1 and coordinates (i0*dx, i1*dx).
struct Grid {
  int dim = 1;
  std::size_t n = 0;       ///< points per axis
  double spacing = 0.0;    ///< 1 / (n - 1)
  std::vector<double> coords;   ///< size() x dim, row-major
  std::vector<double> weights;  ///< quadrature weight per node, sums to 1

  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(coords).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  }
  /// Integer lattice index of node i along `axis`.
  std::size_t lattice(std::size_t i, int axis) const;
};

/// Throws nkn::Error when n < 2 or dim is not 1 or 2.
Grid make_uniform_grid(std::size_t n, int dim);

/// Interaction lists B_r(x_i) = { j : |x_j - x_i| < r }, each sorted by index
/// and containing i itself.
struct Neighborhood {
  double radius = 0.0;
  std::vector<std::size_t> offsets;  ///< CSR row pointer, size() + 1 entries
  std::vector<std::size_t> indices;  ///< concatenated neighbor lists

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t edge_count() const { return indices.size(); }
  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::size_t max_degree() const;
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return std::span<const std::size_t>(indices).subspan(offsets[i], degree(i));
  }
};

Neighborhood build_neighborhood(const Grid& grid, double radius);

/// Trapezoid-rule integral of nodal values.
double integrate(const Grid& grid, std::span<const double> values);

}  // namespace nkn
