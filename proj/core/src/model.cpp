#include "nkn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nkn/error.hpp"

namespace nkn {

const char* variant_name(Variant v) { return v == Variant::nkn ? "nkn" : "gkn"; }

Variant parse_variant(const std::string& s) {
  if (s == "nkn") return Variant::nkn;
  if (s == "gkn") return Variant::gkn;
  throw Error("unknown model variant '" + s + "'");
}

std::size_t OperatorModel::kernel_input_dim() const {
  return 2 * static_cast<std::size_t>(spatial_dim) + (kernel_uses_field ? 2 : 0);
}

std::size_t OperatorModel::lift_input_dim() const { return spatial_dim == 1 ? 2 : 6; }

namespace {

ad::DenseArray glorot(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  ad::DenseArray m({rows, cols});
  for (double& v : m.storage()) v = dist(rng);
  return m;
}

std::vector<std::size_t> full_widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

OperatorModel assemble_model(const ModelSpec& spec) {
  if (spec.spatial_dim != 1 && spec.spatial_dim != 2) throw Error("assemble_model: spatial_dim must be 1 or 2");
  if (spec.feature_dim == 0) throw Error("assemble_model: feature dimension must be at least 1");
  if (spec.depth == 0) throw Error("assemble_model: depth must be at least 1");
  if (!(spec.radius > 0.0)) throw Error("assemble_model: radius must be positive");
  for (auto w : spec.kernel_hidden) {
    if (w == 0) throw Error("assemble_model: zero-width kernel layer");
  }
  for (auto w : spec.reaction_hidden) {
    if (w == 0) throw Error("assemble_model: zero-width reaction layer");
  }

  OperatorModel m;
  m.variant = spec.variant;
  m.kernel_form = KernelForm::network;
  m.spatial_dim = spec.spatial_dim;
  m.feature_dim = spec.feature_dim;
  m.depth = spec.depth;
  m.radius = spec.radius;
  m.kernel_uses_field = spec.kernel_uses_field;
  m.seed = spec.seed;

  const std::size_t d = spec.feature_dim;
  m.kernel = mlp_init(full_widths(m.kernel_input_dim(), spec.kernel_hidden, d * d), spec.seed * 8 + 1);
  if (spec.variant == Variant::nkn) {
    m.reaction = mlp_init(full_widths(static_cast<std::size_t>(spec.spatial_dim), spec.reaction_hidden, d * d),
                          spec.seed * 8 + 2);
  } else {
    m.reaction_matrix = glorot(d, d, spec.seed * 8 + 3);
  }
  m.lift.P = glorot(d, m.lift_input_dim(), spec.seed * 8 + 4);
  m.lift.p = ad::DenseArray({d}, 0.0);
  m.lift.Q = glorot(1, d, spec.seed * 8 + 5);
  m.lift.q = ad::DenseArray({1}, 0.0);
  m.bias = ad::DenseArray({d}, 0.0);
  return m;
}

double green_function(double x, double y) { return 0.5 * (x + y - std::abs(y - x)) - x * y; }

double green_reaction(double x) { return 1.0 - 0.5 * x * (1.0 - x); }

OperatorModel analytic_nkn_1d(const Grid& grid) {
  if (grid.dim != 1) throw Error("analytic_nkn_1d: requires a 1D grid");
  OperatorModel m;
  m.variant = Variant::nkn;
  m.kernel_form = KernelForm::green;
  m.spatial_dim = 1;
  m.feature_dim = 1;
  m.depth = 1;
  m.horizon = 1.0;
  m.radius = 2.0;
  m.lift.P = ad::DenseArray({1, 2}, std::vector<double>{0.0, 1.0});
  m.lift.p = ad::DenseArray({1}, 0.0);
  m.lift.Q = ad::DenseArray({1, 1}, 1.0);
  m.lift.q = ad::DenseArray({1}, 0.0);
  m.bias = ad::DenseArray({1}, 0.0);
  return m;
}

std::vector<ParamRef> parameters(OperatorModel& m) {
  std::vector<ParamRef> refs{{"P", &m.lift.P}, {"p", &m.lift.p}, {"Q", &m.lift.Q}, {"q", &m.lift.q}, {"c", &m.bias}};
  if (m.kernel_form == KernelForm::network) {
    for (std::size_t l = 0; l < m.kernel.layers(); ++l) {
      refs.push_back({"kernel.W" + std::to_string(l), &m.kernel.weights[l]});
      refs.push_back({"kernel.b" + std::to_string(l), &m.kernel.biases[l]});
    }
    if (m.variant == Variant::nkn) {
      for (std::size_t l = 0; l < m.reaction.layers(); ++l) {
        refs.push_back({"reaction.W" + std::to_string(l), &m.reaction.weights[l]});
        refs.push_back({"reaction.b" + std::to_string(l), &m.reaction.biases[l]});
      }
    } else {
      refs.push_back({"R", &m.reaction_matrix});
    }
  }
  return refs;
}

std::vector<const ad::DenseArray*> parameters(const OperatorModel& model) {
  auto refs = parameters(const_cast<OperatorModel&>(model));
  std::vector<const ad::DenseArray*> out;
  out.reserve(refs.size());
  for (auto& r : refs) out.push_back(r.array);
  return out;
}

std::size_t count_model_params(const OperatorModel& model) {
  std::size_t total = 0;
  for (const auto* a : parameters(model)) total += a->size();
  return total;
}

// ---------------------------------------------------------------------------

std::vector<double> gaussian_smooth(const Grid& grid, std::span<const double> field, double variance) {
  if (field.size() != grid.size()) throw ShapeError("gaussian_smooth: field size does not match grid");
  const double cutoff2 = 9.0 * variance;
  const auto reach = static_cast<long>(std::floor(std::sqrt(cutoff2)));
  const long n = static_cast<long>(grid.n);
  std::vector<double> out(field.size(), 0.0);

  if (grid.dim == 1) {
    for (long i = 0; i < n; ++i) {
      double acc = 0.0, mass = 0.0;
      for (long k = -reach; k <= reach; ++k) {
        const long j = i + k;
        if (j < 0 || j >= n) continue;
        const double w = std::exp(-static_cast<double>(k * k) / (2.0 * variance));
        acc += w * field[static_cast<std::size_t>(j)];
        mass += w;
      }
      out[static_cast<std::size_t>(i)] = acc / mass;
    }
    return out;
  }

  for (long a = 0; a < n; ++a) {
    for (long b = 0; b < n; ++b) {
      double acc = 0.0, mass = 0.0;
      for (long ka = -reach; ka <= reach; ++ka) {
        for (long kb = -reach; kb <= reach; ++kb) {
          const double r2 = static_cast<double>(ka * ka + kb * kb);
          if (r2 > cutoff2) continue;
          const long c = a + ka, e = b + kb;
          if (c < 0 || c >= n || e < 0 || e >= n) continue;
          const double w = std::exp(-r2 / (2.0 * variance));
          acc += w * field[static_cast<std::size_t>(c * n + e)];
          mass += w;
        }
      }
      out[static_cast<std::size_t>(a * n + b)] = acc / mass;
    }
  }
  return out;
}

std::vector<double> field_gradient(const Grid& grid, std::span<const double> field) {
  if (field.size() != grid.size()) throw ShapeError("field_gradient: field size does not match grid");
  const std::size_t n = grid.n;
  const double h = grid.spacing;
  const auto dim = static_cast<std::size_t>(grid.dim);
  std::vector<double> g(field.size() * dim, 0.0);
  auto diff = [&](std::size_t k, auto at) {
    if (k == 0) return (at(1) - at(0)) / h;
    if (k == n - 1) return (at(n - 1) - at(n - 2)) / h;
    return (at(k + 1) - at(k - 1)) / (2.0 * h);
  };
  if (dim == 1) {
    for (std::size_t i = 0; i < n; ++i) g[i] = diff(i, [&](std::size_t k) { return field[k]; });
    return g;
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t i = a * n + b;
      g[2 * i] = diff(a, [&](std::size_t k) { return field[k * n + b]; });
      g[2 * i + 1] = diff(b, [&](std::size_t k) { return field[a * n + k]; });
    }
  }
  return g;
}

ad::DenseArray lift_features(const Grid& grid, std::span<const double> field) {
  if (field.size() != grid.size()) {
    throw ShapeError("lift: field has " + std::to_string(field.size()) + " values, grid has " +
                     std::to_string(grid.size()) + " nodes");
  }
  const std::size_t m = grid.size();
  if (grid.dim == 1) {
    ad::DenseArray z({m, 2});
    for (std::size_t i = 0; i < m; ++i) {
      z.at(i, 0) = grid.coords[i];
      z.at(i, 1) = field[i];
    }
    return z;
  }
  const auto smooth = gaussian_smooth(grid, field);
  const auto grad = field_gradient(grid, smooth);
  ad::DenseArray z({m, 6});
  for (std::size_t i = 0; i < m; ++i) {
    z.at(i, 0) = grid.coords[2 * i];
    z.at(i, 1) = grid.coords[2 * i + 1];
    z.at(i, 2) = field[i];
    z.at(i, 3) = smooth[i];
    z.at(i, 4) = grad[2 * i];
    z.at(i, 5) = grad[2 * i + 1];
  }
  return z;
}

ad::DenseArray lift_from_features(const ad::DenseArray& z, const LiftProject& lp) {
  if (z.rank() != 2 || z.cols() != lp.input_dim()) {
    throw ShapeError("lift: features " + ad::shape_string(z.shape()) + " do not match P " +
                     ad::shape_string(lp.P.shape()));
  }
  const std::size_t m = z.rows(), d = lp.feature_dim(), in = lp.input_dim();
  ad::DenseArray h({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      double s = lp.p[a];
      for (std::size_t k = 0; k < in; ++k) s += lp.P[a * in + k] * z.at(i, k);
      h.at(i, a) = s;
    }
  }
  return h;
}

ad::DenseArray lift(std::span<const double> field, const Grid& grid, const LiftProject& lp) {
  return lift_from_features(lift_features(grid, field), lp);
}

ad::DenseArray project(const ad::DenseArray& h, const LiftProject& lp) {
  if (h.rank() != 2 || h.cols() != lp.feature_dim()) {
    throw ShapeError("project: field " + ad::shape_string(h.shape()) + " does not match Q " +
                     ad::shape_string(lp.Q.shape()));
  }
  const std::size_t m = h.rows(), d = lp.feature_dim(), out = lp.output_dim();
  ad::DenseArray u({m, out});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = lp.q[o];
      for (std::size_t a = 0; a < d; ++a) s += lp.Q[o * d + a] * h.at(i, a);
      u.at(i, o) = s;
    }
  }
  return u;
}

void kernel_features(const Grid& grid, std::span<const double> field, bool uses_field, std::size_t i,
                     std::size_t j, std::span<double> out) {
  const auto s = static_cast<std::size_t>(grid.dim);
  const auto xi = grid.point(i);
  const auto xj = grid.point(j);
  std::copy(xi.begin(), xi.end(), out.begin());
  std::copy(xj.begin(), xj.end(), out.begin() + static_cast<long>(s));
  if (uses_field) {
    out[2 * s] = field[i];
    out[2 * s + 1] = field[j];
  }
}

}  // namespace nkn
