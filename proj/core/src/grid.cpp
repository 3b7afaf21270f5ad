#include "nkn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nkn/error.hpp"

namespace nkn {

std::size_t Grid::lattice(std::size_t i, int axis) const {
  if (dim == 1) return i;
  return axis == 0 ? i / n : i % n;
}

Grid make_uniform_grid(std::size_t n, int dim) {
  if (n < 2) throw Error("make_uniform_grid: need at least 2 points per axis, got " + std::to_string(n));
  if (dim != 1 && dim != 2) throw Error("make_uniform_grid: dimension must be 1 or 2, got " + std::to_string(dim));

  Grid g;
  g.dim = dim;
  g.n = n;
  g.spacing = 1.0 / static_cast<double>(n - 1);

  std::vector<double> axis_w(n, g.spacing);
  axis_w.front() *= 0.5;
  axis_w.back() *= 0.5;
  auto coord = [&](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n - 1); };

  if (dim == 1) {
    g.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.coords[i] = coord(i);
    g.weights = axis_w;
  } else {
    g.coords.resize(2 * n * n);
    g.weights.resize(n * n);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t i = a * n + b;
        g.coords[2 * i] = coord(a);
        g.coords[2 * i + 1] = coord(b);
        g.weights[i] = axis_w[a] * axis_w[b];
      }
    }
  }
  return g;
}

std::size_t Neighborhood::max_degree() const {
  std::size_t m = 0;
  for (std::size_t i = 0; i < size(); ++i) m = std::max(m, degree(i));
  return m;
}

Neighborhood build_neighborhood(const Grid& grid, double radius) {
  if (!(radius > 0.0)) throw Error("build_neighborhood: radius must be positive");
  Neighborhood nb;
  nb.radius = radius;
  nb.offsets.reserve(grid.size() + 1);
  nb.offsets.push_back(0);

  // Distances come from integer lattice offsets so membership is exactly
  // symmetric.
  const double h = grid.spacing;
  const double r2 = radius * radius;
  const auto reach = static_cast<long>(std::min<double>(std::ceil(radius / h), static_cast<double>(grid.n)));
  const long n = static_cast<long>(grid.n);

  if (grid.dim == 1) {
    for (long i = 0; i < n; ++i) {
      for (long j = std::max(0L, i - reach); j <= std::min(n - 1, i + reach); ++j) {
        const double d = static_cast<double>(j - i) * h;
        if (d * d < r2) nb.indices.push_back(static_cast<std::size_t>(j));
      }
      nb.offsets.push_back(nb.indices.size());
    }
  } else {
    for (long a = 0; a < n; ++a) {
      for (long b = 0; b < n; ++b) {
        for (long c = std::max(0L, a - reach); c <= std::min(n - 1, a + reach); ++c) {
          for (long e = std::max(0L, b - reach); e <= std::min(n - 1, b + reach); ++e) {
            const double da = static_cast<double>(c - a) * h;
            const double db = static_cast<double>(e - b) * h;
            if (da * da + db * db < r2) nb.indices.push_back(static_cast<std::size_t>(c * n + e));
          }
        }
        nb.offsets.push_back(nb.indices.size());
      }
    }
  }
  return nb;
}

double integrate(const Grid& grid, std::span<const double> values) {
  if (values.size() != grid.size()) throw ShapeError("integrate: field size does not match grid");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += grid.weights[i] * values[i];
  return s;
}

}  // namespace nkn
