#include <cmath>
#include <random>

#include "doctest.h"
#include "nkn/autodiff.hpp"
#include "nkn/error.hpp"
#include "nkn/mlp.hpp"

using namespace nkn;
using ad::DenseArray;
using ad::Tape;
using ad::Var;

namespace {

DenseArray random_array(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  DenseArray a(shape);
  for (auto& v : a.values()) v = nd(rng);
  return a;
}

}  // namespace

TEST_CASE("relu and identity matmul forward") {
  Tape t;
  Var x = t.input(DenseArray::vector({-1.0, 0.0, 2.0}));
  Var y = t.relu(x);
  t.forward();
  CHECK(t.value(y).storage() == std::vector<double>{0.0, 0.0, 2.0});

  Tape t2;
  DenseArray eye({2, 2}, 0.0);
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  Var e = t2.constant(eye);
  Var v = t2.input(DenseArray({2, 1}, std::vector<double>{3.5, -7.25}));
  Var out = t2.matmul(e, v);
  t2.forward();
  CHECK(t2.value(out).storage() == std::vector<double>{3.5, -7.25});
}

TEST_CASE("matmul matches a hand product") {
  Tape t;
  Var a = t.input(DenseArray({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  Var b = t.input(DenseArray({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12}));
  Var c = t.matmul(a, b);
  t.forward();
  CHECK(t.value(c).storage() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("three-layer MLP forward matches straight-line loops") {
  const MLPParams p = mlp_init({3, 5, 4, 2}, 17);
  const std::vector<double> x{0.3, -1.2, 0.7};

  std::vector<double> h = x;
  for (std::size_t l = 0; l < p.layers(); ++l) {
    const std::size_t in = p.widths[l], out = p.widths[l + 1];
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = p.biases[l][o];
      for (std::size_t i = 0; i < in; ++i) s += h[i] * p.weights[l].at(i, o);
      next[o] = (l + 1 < p.layers()) ? std::max(0.0, s) : s;
    }
    h = next;
  }

  Tape t;
  const MLPVars vars = mlp_register(t, p);
  Var in = t.constant(DenseArray({1, 3}, x));
  Var y = mlp_on_tape(t, vars, in);
  t.forward();
  for (std::size_t o = 0; o < 2; ++o) CHECK(t.value(y)[o] == doctest::Approx(h[o]).epsilon(1e-14));
}

TEST_CASE("repeated forward is deterministic") {
  Tape t;
  Var x = t.input({4, 3});
  Var w = t.constant(random_array({3, 2}, 5));
  Var y = t.sum(t.relu(t.matmul(x, w)));
  const DenseArray in = random_array({4, 3}, 6);
  const DenseArray a = ad::forward_eval(t, std::span(&in, 1), y);
  const DenseArray b = ad::forward_eval(t, std::span(&in, 1), y);
  CHECK(a == b);
}

TEST_CASE("shape mismatch names the op and shapes") {
  Tape t;
  Var a = t.input({2, 3});
  Var b = t.input({2, 3});
  try {
    t.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(a, t.input({3, 2})), ShapeError);
}

TEST_CASE("derivative of x*x at 3 is 6") {
  Tape t;
  Var x = t.input(DenseArray::scalar(3.0));
  Var y = t.mul(x, x);
  t.forward();
  t.backward(y);
  CHECK(t.grad(x)[0] == 6.0);
}

TEST_CASE("relu subgradient at -1 and at 0 is 0") {
  Tape t;
  Var x = t.input(DenseArray::vector({-1.0, 0.0, 2.0}));
  Var y = t.sum(t.relu(x));
  t.forward();
  t.backward(y);
  CHECK(t.grad(x).storage() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("backward before forward is an error") {
  Tape t;
  Var x = t.input(DenseArray::scalar(1.0));
  Var y = t.mul(x, x);
  CHECK_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("gradient of an unused input is zero") {
  Tape t;
  Var x = t.input(DenseArray::vector({1.0, 2.0}));
  Var unused = t.input(DenseArray::vector({5.0, 6.0}));
  Var y = t.sum(t.mul(x, x));
  t.forward();
  t.backward(y);
  CHECK(t.grad(unused).storage() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("zero seed yields zero gradients") {
  Tape t;
  Var x = t.input(random_array({3, 4}, 1));
  Var w = t.input(random_array({4, 2}, 2));
  Var y = t.relu(t.matmul(x, w));
  t.forward();
  t.backward(y, DenseArray({3, 2}, 0.0));
  for (double g : t.grad(x).values()) CHECK(g == 0.0);
  for (double g : t.grad(w).values()) CHECK(g == 0.0);
}

TEST_CASE("gradients of f + g equal grad f + grad g") {
  const DenseArray x0 = random_array({3, 3}, 9);
  const DenseArray c = random_array({3, 3}, 10);
  const DenseArray w = random_array({3, 2}, 11);
  // each term reads x once, so both tapes sum contributions in the same order
  auto grad_of = [&](int which) {
    Tape t;
    Var x = t.input(x0);
    Var f = t.sum(t.mul(x, t.constant(c)));
    Var g = t.sum(t.relu(t.matmul(x, t.constant(w))));
    Var y = which == 0 ? f : which == 1 ? g : t.add(f, g);
    t.forward();
    t.backward(y);
    return t.grad(x);
  };
  const DenseArray gf = grad_of(0), gg = grad_of(1), gs = grad_of(2);
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(gs[i] == gf[i] + gg[i]);
}

TEST_CASE("every primitive agrees with central differences") {
  const DenseArray x0 = random_array({3, 4}, 21);
  const DenseArray w = random_array({4, 3}, 22);
  const DenseArray seedv = random_array({3, 4}, 23);
  std::vector<std::pair<const char*, ad::ScalarGraph>> cases;
  cases.emplace_back("matmul", [&](Tape& t, Var x) { return t.sum(t.relu(t.matmul(x, t.constant(w)))); });
  cases.emplace_back("add", [&](Tape& t, Var x) { return t.sum(t.mul(t.add(x, t.constant(seedv)), x)); });
  cases.emplace_back("mul", [&](Tape& t, Var x) { return t.sum(t.mul(t.mul(x, x), t.constant(seedv))); });
  cases.emplace_back("relu", [&](Tape& t, Var x) { return t.sum(t.mul(t.relu(x), t.constant(seedv))); });
  cases.emplace_back("sum_axis0", [&](Tape& t, Var x) {
    Var s = t.sum_axis(x, 0);
    return t.sum(t.mul(s, s));
  });
  cases.emplace_back("sum_axis1", [&](Tape& t, Var x) {
    Var s = t.sum_axis(x, 1);
    return t.sum(t.mul(s, s));
  });
  cases.emplace_back("mean", [&](Tape& t, Var x) {
    Var m = t.mean(t.mul(x, x));
    return t.mul(m, m);
  });
  cases.emplace_back("concat", [&](Tape& t, Var x) {
    Var c = t.concat({x, t.mul(x, x)}, 1);
    return t.sum(t.mul(c, c));
  });
  cases.emplace_back("reshape", [&](Tape& t, Var x) {
    Var r = t.reshape(x, {4, 3});
    return t.sum(t.matmul(r, t.mul(x, x)));
  });
  cases.emplace_back("gather", [&](Tape& t, Var x) {
    Var g = t.gather(x, {0, 5, 5, 11, 2, 7}, {2, 3});
    return t.sum(t.mul(g, g));
  });
  cases.emplace_back("transpose", [&](Tape& t, Var x) {
    return t.sum(t.mul(ad::transpose(t, x), t.constant(w)));
  });
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(ad::finite_diff_check(fn, x0, 1e-5) < 1e-4);
  }
}

TEST_CASE("finite difference check on quadratic and linear maps") {
  const DenseArray a = random_array({4, 4}, 31);
  const DenseArray x0 = random_array({4, 1}, 32);
  const double quad = ad::finite_diff_check(
      [&](Tape& t, Var x) { return t.sum(t.mul(x, t.matmul(t.constant(a), x))); }, x0, 1e-5);
  CHECK(quad < 1e-6);
  const double lin = ad::finite_diff_check(
      [&](Tape& t, Var x) { return t.sum(t.matmul(ad::transpose(t, t.constant(x0)), t.matmul(t.constant(a), x))); },
      x0, 1e-5);
  CHECK(lin < 1e-10);
}

TEST_CASE("finite difference check rejects non-finite values") {
  const DenseArray x0 = DenseArray::vector({1e200, 1e200});
  CHECK_THROWS_AS(ad::finite_diff_check([](Tape& t, Var x) { return t.sum(t.mul(t.mul(x, x), x)); }, x0, 1e-5),
                  NumericalError);
}

TEST_CASE("scalar MLP loss gradient matches finite differences for every weight") {
  const MLPParams p = mlp_init({2, 6, 6, 1}, 41);
  const DenseArray inputs = random_array({5, 2}, 42);
  const DenseArray targets = random_array({5, 1}, 43);
  for (std::size_t l = 0; l < p.layers(); ++l) {
    auto loss = [&](Tape& t, Var w) {
      MLPParams q = p;
      MLPVars vars = mlp_register(t, q);
      vars.weights[l] = w;
      Var y = mlp_on_tape(t, vars, t.constant(inputs));
      Var r = ad::sub(t, y, t.constant(targets));
      return t.sum(t.mul(r, r));
    };
    CAPTURE(l);
    CHECK(ad::finite_diff_check(loss, p.weights[l], 1e-5) < 1e-4);
  }
}

TEST_CASE("broadcast_rows tiles a row") {
  Tape t;
  Var r = t.input(DenseArray({1, 3}, std::vector<double>{1, 2, 3}));
  Var b = ad::broadcast_rows(t, r, 2);
  Var s = t.sum(t.mul(b, t.constant(DenseArray({2, 3}, std::vector<double>{1, 1, 1, 2, 2, 2}))));
  t.forward();
  CHECK(t.value(b).storage() == std::vector<double>{1, 2, 3, 1, 2, 3});
  t.backward(s);
  CHECK(t.grad(r).storage() == std::vector<double>{3, 3, 3});
}

TEST_CASE("dense array rejects inconsistent value counts") {
  CHECK_THROWS_AS(DenseArray({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(DenseArray({0, 2}), ShapeError);
}
