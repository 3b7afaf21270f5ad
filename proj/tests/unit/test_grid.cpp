#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "nkn/error.hpp"
#include "nkn/grid.hpp"

using namespace nkn;

namespace {

std::set<std::size_t> brute_neighbors(const Grid& g, std::size_t i, double r) {
  std::set<std::size_t> out;
  for (std::size_t j = 0; j < g.size(); ++j) {
    double d2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double d = g.point(i)[a] - g.point(j)[a];
      d2 += d * d;
    }
    if (std::sqrt(d2) < r) out.insert(j);
  }
  return out;
}

}  // namespace

TEST_CASE("1D grid of 101 points") {
  const Grid g = make_uniform_grid(101, 1);
  CHECK(g.size() == 101);
  CHECK(g.spacing == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(g.point(0)[0] == 0.0);
  CHECK(g.point(100)[0] == 1.0);
  CHECK(g.weights[0] == doctest::Approx(0.005));
  CHECK(g.weights[50] == doctest::Approx(0.01));
}

TEST_CASE("two-point grid carries half weight per node") {
  const Grid g = make_uniform_grid(2, 1);
  CHECK(g.coords == std::vector<double>{0.0, 1.0});
  CHECK(g.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("16x16 grid") {
  const Grid g = make_uniform_grid(16, 2);
  CHECK(g.size() == 256);
  CHECK(g.spacing == doctest::Approx(1.0 / 15.0));
  // last axis fastest
  CHECK(g.point(1)[0] == 0.0);
  CHECK(g.point(1)[1] == doctest::Approx(1.0 / 15.0));
  CHECK(g.point(16)[0] == doctest::Approx(1.0 / 15.0));
  CHECK(g.lattice(16 * 3 + 5, 0) == 3);
  CHECK(g.lattice(16 * 3 + 5, 1) == 5);
}

TEST_CASE("invalid grids are rejected") {
  CHECK_THROWS_AS(make_uniform_grid(1, 1), Error);
  CHECK_THROWS_AS(make_uniform_grid(0, 2), Error);
  CHECK_THROWS_AS(make_uniform_grid(5, 3), Error);
}

TEST_CASE("quadrature weights sum to one") {
  for (int dim : {1, 2}) {
    for (std::size_t n : {2, 3, 16, 31, 101}) {
      const Grid g = make_uniform_grid(n, dim);
      double s = 0.0;
      for (double w : g.weights) s += w;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("quadrature of sin(pi x) converges at least first order") {
  const double exact = 2.0 / std::numbers::pi;
  double prev = 0.0;
  for (std::size_t n : {11, 21, 41, 81, 161}) {
    const Grid g = make_uniform_grid(n, 1);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = std::sin(std::numbers::pi * g.coords[i]);
    const double err = std::abs(integrate(g, v) - exact);
    if (prev > 0.0) CHECK(std::log2(prev / err) >= 1.0);
    prev = err;
  }
}

TEST_CASE("2D quadrature of a separable product") {
  const Grid g = make_uniform_grid(81, 2);
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    v[i] = std::sin(std::numbers::pi * g.point(i)[0]) * std::sin(std::numbers::pi * g.point(i)[1]);
  }
  const double exact = 4.0 / (std::numbers::pi * std::numbers::pi);
  CHECK(integrate(g, v) == doctest::Approx(exact).epsilon(1e-3));
}

TEST_CASE("radius beyond the domain diameter links everything") {
  const Grid g = make_uniform_grid(7, 2);
  const Neighborhood nb = build_neighborhood(g, 2.0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(nb.degree(i) == g.size());
}

TEST_CASE("interior neighbor counts") {
  const Grid g2 = make_uniform_grid(16, 2);
  const Neighborhood nb2 = build_neighborhood(g2, 0.10);
  CHECK(nb2.degree(16 * 7 + 7) == 9);

  const Grid g1 = make_uniform_grid(101, 1);
  const Neighborhood nb1 = build_neighborhood(g1, 0.015);
  CHECK(nb1.degree(50) == 3);
  CHECK(nb1.degree(0) == 2);
}

TEST_CASE("neighborhoods match brute force and are symmetric") {
  for (std::size_t n = 2; n <= 31; n += 3) {
    const Grid g = make_uniform_grid(n, 2);
    for (double r : {0.07, 0.13, 0.26}) {
      const Neighborhood nb = build_neighborhood(g, r);
      std::vector<std::set<std::size_t>> lists(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto row = nb.neighbors(i);
        lists[i] = std::set<std::size_t>(row.begin(), row.end());
        CHECK(lists[i].size() == row.size());
        CHECK(lists[i].count(i) == 1);
      }
      bool symmetric = true;
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j : lists[i]) symmetric = symmetric && lists[j].count(i) == 1;
      }
      CHECK(symmetric);
      if (n <= 11) {
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(lists[i] == brute_neighbors(g, i, r));
      }
    }
  }
}

TEST_CASE("membership is strict") {
  const Grid g = make_uniform_grid(11, 1);
  const Neighborhood nb = build_neighborhood(g, 0.2 + 1e-12);
  CHECK(nb.degree(5) == 5);
  const Grid exact = make_uniform_grid(5, 1);
  CHECK(build_neighborhood(exact, 0.25).degree(2) == 1);
  CHECK(build_neighborhood(exact, 0.5).degree(2) == 3);
}
