#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "nkn/datagen.hpp"
#include "nkn/error.hpp"
#include "nkn/layers.hpp"

using namespace nkn;
using ad::DenseArray;

namespace {

void make_constant(MLPParams& net, double value) {
  net.weights.back().fill(0.0);
  net.biases.back().fill(value);
}

OperatorModel small_model(Variant v, std::size_t depth, std::uint64_t seed, std::size_t d = 1) {
  ModelSpec spec;
  spec.variant = v;
  spec.depth = depth;
  spec.feature_dim = d;
  spec.kernel_hidden = {12, 12};
  spec.reaction_hidden = {8};
  spec.seed = seed;
  return assemble_model(spec);
}

std::vector<double> random_field(std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(m);
  for (auto& x : v) x = nd(rng);
  return v;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("nonlocal laplacian annihilates constants") {
  for (int dim : {1, 2}) {
    const Grid g = make_uniform_grid(dim == 1 ? 41 : 9, dim);
    const Neighborhood nb = build_neighborhood(g, dim == 1 ? 2.0 : 0.3);
    const DenseArray h({g.size(), 2}, -4.75);
    const auto k = [](std::size_t i, std::size_t j, std::span<double> out) {
      for (std::size_t a = 0; a < out.size(); ++a) out[a] = std::sin(double(i + 3 * j + a));
    };
    const DenseArray out = nonlocal_laplacian(h, k, nb, g);
    for (double v : out.values()) CHECK(std::abs(v) < 1e-12 * double(g.size()));
  }
}

TEST_CASE("nonlocal laplacian on three equally weighted nodes") {
  Grid g;
  g.dim = 1;
  g.n = 3;
  g.spacing = 0.5;
  g.coords = {0.0, 0.5, 1.0};
  const double w = 0.3;
  g.weights = {w, w, w};
  Neighborhood nb;
  nb.radius = 2.0;
  nb.offsets = {0, 3, 6, 9};
  nb.indices = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  const DenseArray h({3, 1}, std::vector<double>{0.0, 1.0, 4.0});
  const auto one = [](std::size_t, std::size_t, std::span<double> out) { out[0] = 1.0; };
  const DenseArray out = nonlocal_laplacian(h, one, nb, g);
  CHECK(out[0] == doctest::Approx(5.0 * w).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(w * (-1.0 + 3.0)).epsilon(1e-15));
  CHECK(out[2] == doctest::Approx(w * (-4.0 - 3.0)).epsilon(1e-15));

  const auto zero = [](std::size_t, std::size_t, std::span<double> o) { o[0] = 0.0; };
  const DenseArray flat = nonlocal_laplacian(h, zero, nb, g);
  for (double v : flat.values()) CHECK(v == 0.0);
}

TEST_CASE("discrete integration by parts for symmetric kernels") {
  for (int dim : {1, 2}) {
    const Grid g = make_uniform_grid(dim == 1 ? 37 : 11, dim);
    const Neighborhood nb = build_neighborhood(g, dim == 1 ? 2.0 : 0.35);
    auto kval = [&](std::size_t i, std::size_t j) {
      double d2 = 0.0;
      for (int a = 0; a < dim; ++a) d2 += std::pow(g.point(i)[a] - g.point(j)[a], 2);
      const double xi = g.point(i)[0], xj = g.point(j)[0];
      return std::exp(-d2) * (1.0 + xi * xj);
    };
    const auto k = [&](std::size_t i, std::size_t j, std::span<double> out) { out[0] = kval(i, j); };
    const auto eta = random_field(g.size(), 100 + dim);
    const DenseArray h({g.size(), 1}, eta);
    const DenseArray lap = nonlocal_laplacian(h, k, nb, g);
    double lhs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) lhs += g.weights[i] * eta[i] * (-lap[i]);
    double rhs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j : nb.neighbors(i)) {
        rhs += 0.5 * g.weights[i] * g.weights[j] * kval(i, j) * std::pow(eta[j] - eta[i], 2);
      }
    }
    CHECK(std::abs(lhs - rhs) < 1e-10);
    CHECK(rhs >= 0.0);
  }
}

TEST_CASE("nkn layer with zero step is the identity") {
  const Grid g = make_uniform_grid(17, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 1, 3);
  m.horizon = 0.0;
  const KernelTables t = evaluate_kernels(m, g, nb);
  const DenseArray h({g.size(), 1}, random_field(g.size(), 1));
  CHECK(nkn_layer(h, m, t, g, nb) == h);
}

TEST_CASE("nkn layer with zero kernel and reaction drifts by dt c") {
  const Grid g = make_uniform_grid(9, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 4, 3, 2);
  make_constant(m.kernel, 0.0);
  make_constant(m.reaction, 0.0);
  m.bias = DenseArray::vector({0.8, -1.2});
  const KernelTables t = evaluate_kernels(m, g, nb);
  const DenseArray h({g.size(), 2}, random_field(2 * g.size(), 2));
  const DenseArray out = nkn_layer(h, m, t, g, nb);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(out.at(i, 0) == doctest::Approx(h.at(i, 0) + 0.25 * 0.8).epsilon(1e-15));
    CHECK(out.at(i, 1) == doctest::Approx(h.at(i, 1) - 0.25 * 1.2).epsilon(1e-15));
  }
}

TEST_CASE("nkn layer departs from identity linearly in dt") {
  const Grid g = make_uniform_grid(21, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 1, 8);
  m.bias = DenseArray::vector({0.3});
  const KernelTables t = evaluate_kernels(m, g, nb);
  const DenseArray h({g.size(), 1}, random_field(g.size(), 4));
  std::vector<double> rate;
  for (double dt : {1e-1, 1e-2, 1e-3}) {
    m.horizon = dt;
    const DenseArray out = nkn_layer(h, m, t, g, nb);
    rate.push_back(max_abs_diff(out.values(), h.values()) / dt);
  }
  CHECK(rate[0] > 0.0);
  CHECK(rate[1] == doctest::Approx(rate[0]).epsilon(1e-9));
  CHECK(rate[2] == doctest::Approx(rate[0]).epsilon(1e-9));
}

TEST_CASE("nkn layer reports the failing layer") {
  const Grid g = make_uniform_grid(5, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 1, 3);
  const KernelTables t = evaluate_kernels(m, g, nb);
  DenseArray h({g.size(), 1}, 1.0);
  h[2] = std::numeric_limits<double>::infinity();
  try {
    nkn_layer(h, m, t, g, nb, 7);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("gkn layer clamps and passes nonnegative fields") {
  const Grid g = make_uniform_grid(9, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::gkn, 1, 5, 2);
  make_constant(m.kernel, 0.0);
  m.reaction_matrix = DenseArray({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  m.bias = DenseArray::vector({0.0, 0.0});
  const KernelTables t = evaluate_kernels(m, g, nb);
  DenseArray h({g.size(), 2});
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = 0.1 * double(k);
  CHECK(gkn_layer(h, m, t, g, nb) == h);

  m.reaction_matrix.fill(0.0);
  m.bias = DenseArray::vector({-0.5, -2.0});
  const DenseArray clamped = gkn_layer(h, m, t, g, nb);
  for (double v : clamped.values()) CHECK(v == 0.0);
}

TEST_CASE("gkn layer on a two-node grid by hand") {
  const Grid g = make_uniform_grid(2, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::gkn, 1, 5);
  make_constant(m.kernel, 0.6);
  m.reaction_matrix = DenseArray({1, 1}, 1.5);
  m.bias = DenseArray::vector({-1.0});
  const KernelTables t = evaluate_kernels(m, g, nb);
  const DenseArray h({2, 1}, std::vector<double>{1.0, -2.0});
  const DenseArray out = gkn_layer(h, m, t, g, nb);
  // integral = 0.5 * 0.6 * (1 - 2) = -0.3 at both nodes
  CHECK(out[0] == doctest::Approx(std::max(0.0, 1.5 - 0.3 - 1.0)));
  CHECK(out[1] == doctest::Approx(std::max(0.0, -3.0 - 0.3 - 1.0)));
}

TEST_CASE("depth zero is the affine lift then projection") {
  const Grid g = make_uniform_grid(13, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 1, 9, 3);
  m.depth = 0;
  const auto f = random_field(g.size(), 6);
  const DenseArray expect = project(lift(f, g, m.lift), m.lift);
  const auto ref = model_forward_reference(m, f, g, nb);
  CHECK(max_abs_diff(ref, expect.values()) < 1e-14);
  const auto tape = model_forward(m, f, g, nb);
  CHECK(max_abs_diff(tape, expect.values()) < 1e-14);
}

TEST_CASE("tape forward agrees with the loop reference") {
  for (Variant v : {Variant::nkn, Variant::gkn}) {
    for (std::size_t d : {1, 3}) {
      const Grid g = make_uniform_grid(15, 1);
      const Neighborhood nb = build_neighborhood(g, 2.0);
      OperatorModel m = small_model(v, 3, 11 + d, d);
      m.bias.fill(0.05);
      const auto f = random_field(g.size(), 7);
      const auto a = model_forward(m, f, g, nb);
      const auto b = model_forward_reference(m, f, g, nb);
      CHECK(max_abs_diff(a, b) < 1e-12);
      CHECK(model_forward(m, f, g, nb) == a);
    }
  }
  ModelSpec spec;
  spec.spatial_dim = 2;
  spec.feature_dim = 2;
  spec.kernel_uses_field = true;
  spec.radius = 0.3;
  spec.kernel_hidden = {6};
  spec.reaction_hidden = {6};
  spec.depth = 2;
  spec.seed = 3;
  const OperatorModel m2 = assemble_model(spec);
  const Grid g2 = make_uniform_grid(7, 2);
  const Neighborhood nb2 = build_neighborhood(g2, spec.radius);
  auto b = random_field(g2.size(), 8);
  for (auto& x : b) x = x > 0 ? 12.0 : 3.0;
  CHECK(max_abs_diff(model_forward(m2, b, g2, nb2), model_forward_reference(m2, b, g2, nb2)) < 1e-12);
}

TEST_CASE("forward pass is equivariant under node relabeling") {
  const Grid g = make_uniform_grid(11, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  std::vector<std::size_t> perm(g.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(12));

  // node k of the relabeled grid is node perm[k] of the original
  Grid pg = g;
  for (std::size_t k = 0; k < g.size(); ++k) {
    pg.coords[k] = g.coords[perm[k]];
    pg.weights[k] = g.weights[perm[k]];
  }
  Neighborhood pnb;
  pnb.radius = 2.0;
  pnb.offsets.push_back(0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (std::size_t j = 0; j < g.size(); ++j) pnb.indices.push_back(j);
    pnb.offsets.push_back(pnb.indices.size());
  }
  for (Variant v : {Variant::nkn, Variant::gkn}) {
    const OperatorModel m = small_model(v, 2, 21);
    const auto f = random_field(g.size(), 13);
    std::vector<double> pf(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) pf[k] = f[perm[k]];
    const auto u = model_forward_reference(m, f, g, nb);
    const auto pu = model_forward_reference(m, pf, pg, pnb);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(pu[k] == doctest::Approx(u[perm[k]]).epsilon(1e-12));
  }
}

TEST_CASE("explicit Euler refinement converges at first order") {
  const Grid g = make_uniform_grid(21, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  OperatorModel m = small_model(Variant::nkn, 1, 31);
  m.bias = DenseArray::vector({0.4});
  const auto f = random_field(g.size(), 14);
  std::vector<std::vector<double>> outs;
  for (std::size_t depth : {4, 8, 16, 32}) {
    m.depth = depth;
    outs.push_back(model_forward_reference(m, f, g, nb));
  }
  const double d1 = max_abs_diff(outs[0], outs[1]);
  const double d2 = max_abs_diff(outs[1], outs[2]);
  const double d3 = max_abs_diff(outs[2], outs[3]);
  CHECK(d1 / d2 == doctest::Approx(2.0).epsilon(0.25));
  CHECK(d2 / d3 == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("analytic one-layer model reproduces the Poisson solutions") {
  const Grid g = make_uniform_grid(101, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  const OperatorModel m = analytic_nkn_1d(g);
  CHECK(m.depth == 1);
  CHECK(m.dt() == 1.0);
  const Dataset ds = gen_poisson_1d(8, g, 5);
  for (std::size_t j = 0; j < ds.samples; ++j) {
    const auto f = ds.input_sample(j);
    const auto u = ds.output_sample(j);
    const auto pred = model_forward(m, f, g, nb);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      num += std::pow(pred[i] - u[i], 2);
      den += u[i] * u[i];
    }
    CHECK(num / den <= 2e-3);
    // trapezoid integration of G is exact on the grid, so the layer equals
    // the plain Green quadrature
    const auto green = green_integral_solve(f, g);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(pred[i] - green[i]));
    CHECK(worst < 1e-10 * (1.0 + *std::max_element(f.begin(), f.end())));
  }
}

TEST_CASE("coercivity estimates") {
  const Grid g = make_uniform_grid(41, 1);
  const Neighborhood nb = build_neighborhood(g, 2.0);

  OperatorModel pure = small_model(Variant::nkn, 1, 2);
  make_constant(pure.kernel, 0.0);
  make_constant(pure.reaction, 2.0);
  CHECK(estimate_coercivity(pure, g, nb, 20, 1) == doctest::Approx(2.0).epsilon(1e-10));

  OperatorModel pos = small_model(Variant::nkn, 1, 2);
  make_constant(pos.kernel, 1.0);
  make_constant(pos.reaction, 0.5);
  CHECK(estimate_coercivity(pos, g, nb, 20, 2) >= 0.5 - 1e-10);

  const Grid g101 = make_uniform_grid(101, 1);
  const double c = estimate_coercivity(analytic_nkn_1d(g101), g101, build_neighborhood(g101, 2.0), 50, 3);
  CHECK(c > 0.89);
  CHECK(c < 1.0);
}
