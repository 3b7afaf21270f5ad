#include "nkn/datagen.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "nkn/error.hpp"

namespace nkn {

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t j) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(static_cast<std::uint64_t>(j) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

std::size_t Dataset::nodes() const { return dim == 1 ? n : n * n; }

std::span<const double> Dataset::input_sample(std::size_t j) const {
  if (j >= samples) throw Error("dataset: sample " + std::to_string(j) + " out of range");
  return std::span<const double>(input).subspan(j * nodes(), nodes());
}

std::span<const double> Dataset::output_sample(std::size_t j) const {
  if (j >= samples) throw Error("dataset: sample " + std::to_string(j) + " out of range");
  return std::span<const double>(output).subspan(j * nodes(), nodes());
}

FieldStats field_stats(std::span<const double> values) {
  if (values.empty()) throw Error("field_stats: empty field");
  FieldStats s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  const double var = sq / static_cast<double>(values.size());
  if (var > 0.0) {
    s.std = std::sqrt(var);
  } else {
    s.std = 1.0;
    s.degenerate = true;
  }
  return s;
}

Normalizer normalizer_from(const Dataset& train) {
  if (train.samples == 0) throw Error("normalizer_from: empty training split");
  const FieldStats in = field_stats(train.input);
  const FieldStats out = field_stats(train.output);
  return Normalizer{in.mean, in.std, out.mean, out.std};
}

Dataset normalize(const Dataset& ds) {
  if (ds.samples == 0) throw Error("normalize: empty dataset");
  Dataset out = ds;
  out.input_stats = field_stats(ds.input);
  out.output_stats = field_stats(ds.output);
  for (double& v : out.input) v = (v - out.input_stats.mean) / out.input_stats.std;
  for (double& v : out.output) v = (v - out.output_stats.mean) / out.output_stats.std;
  return out;
}

std::vector<double> denormalize(std::span<const double> values, const FieldStats& stats) {
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = v * stats.std + stats.mean;
  return out;
}

Dataset subset(const Dataset& ds, std::size_t begin, std::size_t count) {
  if (begin + count > ds.samples) throw Error("subset: range exceeds dataset size");
  Dataset out = ds;
  const std::size_t m = ds.nodes();
  out.samples = count;
  out.input.assign(ds.input.begin() + static_cast<long>(begin * m), ds.input.begin() + static_cast<long>((begin + count) * m));
  out.output.assign(ds.output.begin() + static_cast<long>(begin * m),
                    ds.output.begin() + static_cast<long>((begin + count) * m));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> poisson_coefficients(std::uint64_t seed, std::size_t j) {
  auto rng = sample_rng(seed, j);
  std::vector<double> c(kPoissonModes + 1, 0.0);
  double total = 0.0;
  for (std::size_t k = 1; k <= kPoissonModes; ++k) {
    const double bound = std::exp(-0.1 * static_cast<double>(k * k));
    std::uniform_real_distribution<double> dist(0.0, bound);
    c[k] = dist(rng);
    total += c[k];
  }
  c[0] = -total;
  return c;
}

Dataset gen_poisson_1d(std::size_t n_samples, const Grid& grid, std::uint64_t seed) {
  if (grid.dim != 1) throw Error("gen_poisson_1d: requires a 1D grid");
  const std::size_t m = grid.size();
  Dataset ds;
  ds.generator = "poisson1d";
  ds.seed = seed;
  ds.dim = 1;
  ds.n = grid.n;
  ds.samples = n_samples;
  ds.input_name = "f";
  ds.output_name = "u";
  ds.input.resize(n_samples * m);
  ds.output.resize(n_samples * m);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t j = 0; j < n_samples; ++j) {
    const auto c = poisson_coefficients(seed, j);
    for (std::size_t i = 0; i < m; ++i) {
      const double x = grid.coords[i];
      double u = c[0], f = 0.0;
      for (std::size_t k = 1; k <= kPoissonModes; ++k) {
        const double wk = two_pi * static_cast<double>(k);
        const double ck = c[k] * std::cos(wk * x);
        u += ck;
        f += wk * wk * ck;
      }
      ds.input[j * m + i] = f;
      ds.output[j * m + i] = u;
    }
  }
  ds.input_stats = field_stats(ds.input);
  ds.output_stats = field_stats(ds.output);
  ds.provenance["forcing"] = "analytic second derivative of the cosine series";
  ds.provenance["coefficients"] = "u_k ~ U[0, exp(-0.1 k^2)], k = 1..100; u_0 = -sum u_k";
  return ds;
}

std::vector<double> green_integral_solve(std::span<const double> f, const Grid& grid) {
  if (grid.dim != 1) throw Error("green_integral_solve: requires a 1D grid");
  if (f.size() != grid.size()) throw ShapeError("green_integral_solve: field does not match grid");
  const std::size_t m = grid.size();
  std::vector<double> u(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += grid.weights[j] * green_function(grid.coords[i], grid.coords[j]) * f[j];
    u[i] = s;
  }
  return u;
}

// ---------------------------------------------------------------------------

std::vector<double> grf_coefficients(std::uint64_t seed, std::size_t j) {
  auto rng = sample_rng(seed, j);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi2 = std::numbers::pi * std::numbers::pi;
  std::vector<double> xi(kGrfModes * kGrfModes);
  for (std::size_t a = 0; a < kGrfModes; ++a) {
    for (std::size_t b = 0; b < kGrfModes; ++b) {
      const double k1 = static_cast<double>(a + 1), k2 = static_cast<double>(b + 1);
      xi[a * kGrfModes + b] = normal(rng) / (pi2 * (k1 * k1 + k2 * k2) + 9.0);
    }
  }
  return xi;
}

std::vector<double> grf_evaluate(std::span<const double> coefficients, std::size_t n) {
  if (coefficients.size() != kGrfModes * kGrfModes) throw ShapeError("grf_evaluate: expected 64 x 64 coefficients");
  if (n < 2) throw Error("grf_evaluate: grid needs at least 2 points");
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto nn = static_cast<Eigen::Index>(n);
  const auto kk = static_cast<Eigen::Index>(kGrfModes);
  RowMatrix s(nn, kk);
  for (Eigen::Index i = 0; i < nn; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n - 1);
    for (Eigen::Index k = 0; k < kk; ++k) s(i, k) = std::sin(std::numbers::pi * static_cast<double>(k + 1) * x);
  }
  Eigen::Map<const RowMatrix> c(coefficients.data(), kk, kk);
  RowMatrix g = s * c * s.transpose();
  std::vector<double> out(n * n);
  Eigen::Map<RowMatrix>(out.data(), nn, nn) = g;
  return out;
}

std::vector<double> threshold_permeability(std::span<const double> g) {
  std::vector<double> b(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) b[i] = g[i] >= 0.0 ? 12.0 : 3.0;
  return b;
}

std::vector<double> grf_darcy_permeability(std::uint64_t seed, std::size_t n, std::size_t j) {
  return threshold_permeability(grf_evaluate(grf_coefficients(seed, j), n));
}

namespace {

class DarcyOperator {
 public:
  DarcyOperator(std::span<const double> b, std::size_t n) : n_(n), inv_h2_(static_cast<double>((n - 1) * (n - 1))) {
    east_.assign(n * n, 0.0);
    north_.assign(n * n, 0.0);
    diag_.assign(n * n, 0.0);
    auto harmonic = [](double p, double q) { return 2.0 * p * q / (p + q); };
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t p = a * n + c;
        if (a + 1 < n) east_[p] = harmonic(b[p], b[p + n]) * inv_h2_;
        if (c + 1 < n) north_[p] = harmonic(b[p], b[p + 1]) * inv_h2_;
      }
    }
    for (std::size_t a = 1; a + 1 < n; ++a) {
      for (std::size_t c = 1; c + 1 < n; ++c) {
        const std::size_t p = a * n + c;
        diag_[p] = east_[p] + east_[p - n] + north_[p] + north_[p - 1];
      }
    }
  }

  bool interior(std::size_t p) const {
    const std::size_t a = p / n_, c = p % n_;
    return a > 0 && c > 0 && a + 1 < n_ && c + 1 < n_;
  }

  /// y = A x on interior nodes; boundary entries of x are treated as zero.
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    const std::size_t n = n_;
    for (std::size_t a = 1; a + 1 < n; ++a) {
      for (std::size_t c = 1; c + 1 < n; ++c) {
        const std::size_t p = a * n + c;
        double v = diag_[p] * x[p];
        if (a + 1 < n - 1) v -= east_[p] * x[p + n];
        if (a > 1) v -= east_[p - n] * x[p - n];
        if (c + 1 < n - 1) v -= north_[p] * x[p + 1];
        if (c > 1) v -= north_[p - 1] * x[p - 1];
        y[p] = v;
      }
    }
  }

  const std::vector<double>& diagonal() const { return diag_; }

 private:
  std::size_t n_;
  double inv_h2_;
  std::vector<double> east_, north_, diag_;
};

void check_darcy_inputs(std::span<const double> b, std::span<const double> f, std::size_t n) {
  if (n < 3) throw Error("fd_solve_darcy: grid needs at least 3 points per axis");
  if (b.size() != n * n || f.size() != n * n) throw ShapeError("fd_solve_darcy: fields do not match the n x n grid");
  for (double v : b) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("fd_solve_darcy: permeability must be positive and finite");
  }
}

}  // namespace

DarcySolution fd_solve_darcy(std::span<const double> b, std::span<const double> f, std::size_t n, double tolerance,
                             std::size_t max_iterations) {
  check_darcy_inputs(b, f, n);
  if (max_iterations == 0) max_iterations = 20 * n * n;
  const DarcyOperator op(b, n);
  const std::size_t total = n * n;
  DarcySolution sol;
  sol.u.assign(total, 0.0);

  std::vector<double> r(total, 0.0), z(total, 0.0), p(total, 0.0), ap(total, 0.0);
  double fnorm2 = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    if (!op.interior(i)) continue;
    r[i] = f[i];
    fnorm2 += f[i] * f[i];
  }
  if (fnorm2 == 0.0) return sol;
  const auto& diag = op.diagonal();
  auto precondition = [&] {
    for (std::size_t i = 0; i < total; ++i) z[i] = op.interior(i) ? r[i] / diag[i] : 0.0;
  };
  auto dot = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < total; ++i) s += x[i] * y[i];
    return s;
  };
  precondition();
  p = z;
  double rz = dot(r, z);
  const double fnorm = std::sqrt(fnorm2);
  double rel = 1.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    op.apply(p, ap);
    const double alpha = rz / dot(p, ap);
    for (std::size_t i = 0; i < total; ++i) {
      sol.u[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    rel = std::sqrt(dot(r, r)) / fnorm;
    sol.iterations = it + 1;
    if (rel <= tolerance) break;
    precondition();
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < total; ++i) p[i] = z[i] + beta * p[i];
  }
  // Report the true residual, not the recursively updated one.
  const auto res = darcy_residual(b, f, sol.u, n);
  double rn = 0.0;
  for (double v : res) rn += v * v;
  sol.relative_residual = std::sqrt(rn) / fnorm;
  if (rel > tolerance) {
    throw NumericalError("fd_solve_darcy: CG did not reach residual " + std::to_string(tolerance) + " in " +
                         std::to_string(max_iterations) + " iterations (residual " + std::to_string(rel) + ")");
  }
  return sol;
}

std::vector<double> darcy_residual(std::span<const double> b, std::span<const double> f, std::span<const double> u,
                                   std::size_t n) {
  check_darcy_inputs(b, f, n);
  if (u.size() != n * n) throw ShapeError("darcy_residual: solution does not match grid");
  const DarcyOperator op(b, n);
  std::vector<double> x(u.begin(), u.end()), y(n * n, 0.0), r(n * n, 0.0);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!op.interior(i)) x[i] = 0.0;
  }
  op.apply(x, y);
  for (std::size_t i = 0; i < n * n; ++i) r[i] = op.interior(i) ? f[i] - y[i] : 0.0;
  return r;
}

std::vector<double> downsample(std::span<const double> field, std::size_t n_from, std::size_t n_to) {
  if (field.size() != n_from * n_from) throw ShapeError("downsample: field does not match source grid");
  if (n_to < 2 || n_to > n_from || (n_from - 1) % (n_to - 1) != 0) {
    throw Error("downsample: cannot subsample " + std::to_string(n_from) + " points to " + std::to_string(n_to));
  }
  const std::size_t stride = (n_from - 1) / (n_to - 1);
  std::vector<double> out(n_to * n_to);
  for (std::size_t a = 0; a < n_to; ++a)
    for (std::size_t c = 0; c < n_to; ++c) out[a * n_to + c] = field[(a * stride) * n_from + c * stride];
  return out;
}

std::vector<Dataset> gen_darcy_2d(std::size_t n_samples, std::uint64_t seed, std::span<const std::size_t> targets,
                                  std::size_t n_fine) {
  if (targets.empty()) throw Error("gen_darcy_2d: no target resolution");
  std::vector<Dataset> out(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const std::size_t n = targets[t];
    if (n < 2 || n > n_fine || (n_fine - 1) % (n - 1) != 0) {
      throw Error("gen_darcy_2d: resolution " + std::to_string(n) + " does not divide the fine grid");
    }
    Dataset& ds = out[t];
    ds.generator = "darcy2d";
    ds.seed = seed;
    ds.dim = 2;
    ds.n = n;
    ds.samples = n_samples;
    ds.input_name = "b";
    ds.output_name = "u";
    ds.input.reserve(n_samples * n * n);
    ds.output.reserve(n_samples * n * n);
    ds.provenance["forcing"] = "f = 1";
    ds.provenance["boundary"] = "u = 0 (Dirichlet)";
    ds.provenance["grf_basis"] = "sin(pi k1 x1) sin(pi k2 x2), k1,k2 = 1..64, std (pi^2 |k|^2 + 9)^-1";
    ds.provenance["threshold"] = "b = 12 where g >= 0, else 3";
    ds.provenance["solver"] = "5-point flux FD, harmonic faces, PCG to 1e-10";
    ds.provenance["fine_grid"] = std::to_string(n_fine);
  }
  const std::vector<double> forcing(n_fine * n_fine, 1.0);
  for (std::size_t j = 0; j < n_samples; ++j) {
    const auto b = grf_darcy_permeability(seed, n_fine, j);
    const auto sol = fd_solve_darcy(b, forcing, n_fine);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto bs = downsample(b, n_fine, targets[t]);
      const auto us = downsample(sol.u, n_fine, targets[t]);
      out[t].input.insert(out[t].input.end(), bs.begin(), bs.end());
      out[t].output.insert(out[t].output.end(), us.begin(), us.end());
    }
  }
  for (auto& ds : out) {
    if (n_samples > 0) {
      ds.input_stats = field_stats(ds.input);
      ds.output_stats = field_stats(ds.output);
    }
  }
  return out;
}

}  // namespace nkn
