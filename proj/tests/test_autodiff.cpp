#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mixdann/autodiff.hpp"
#include "mixdann/errors.hpp"
#include "mixdann/gradcheck.hpp"
#include "mixdann/layers.hpp"
#include "test_util.hpp"

using namespace mixdann;
using namespace mixdann::testing;

TEST_CASE("tensor construction and shape checks") {
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS(t.item());
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("MXT1 round trip is exact") {
  Rng rng(3);
  const Tensor t = random_tensor({2, 3, 4}, rng, -1e3, 1e3);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "MXT1");
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 24 * 8);
  // rank as little-endian u32
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);
  CHECK(bytes[5] == 0);
  CHECK(read_tensor(ss) == t);

  std::stringstream scalar;
  write_tensor(scalar, Tensor::scalar(-2.5));
  CHECK(read_tensor(scalar).item() == -2.5);

  std::stringstream bad("MXT2\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_tensor(bad), DataError);
  std::stringstream truncated(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_tensor(truncated), DataError);
}

TEST_CASE("elementwise forward examples") {
  Tape tape;
  const auto a = tape.constant(Tensor({2}, {1, 2}));
  const auto b = tape.constant(Tensor({2}, {3, 4}));
  CHECK(add(a, b).value().values() == std::vector<double>{4, 6});
  CHECK(mul(tape.constant(Tensor({2}, {2, 3})), tape.constant(Tensor({2}, {0, 0}))).value().values() ==
        std::vector<double>{0, 0});

  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {0.3, -1.2, 7.0, 2.5});
  CHECK(matmul(tape.constant(eye), tape.constant(m)).value() == m);
}

TEST_CASE("shape errors name the op and both shapes") {
  Tape tape;
  const auto a = tape.constant(Tensor({2, 3}));
  const auto b = tape.constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_NOTHROW(matmul(a, b));
}

TEST_CASE("backward examples") {
  SUBCASE("d(w^2)/dw = 2w") {
    Parameter w("w", Role::Theta, Tensor({1}, {3.0}));
    Tape tape;
    const auto v = tape.parameter(w);
    tape.backward(sum(mul(v, v)));
    CHECK(w.grad[0] == 6.0);
  }
  SUBCASE("a constant root leaves parameters at zero") {
    Parameter w("w", Role::Theta, Tensor({1}, {3.0}));
    Tape tape;
    tape.parameter(w);
    tape.backward(tape.constant(Tensor::scalar(2.0)));
    CHECK(w.grad[0] == 0.0);
  }
  SUBCASE("relu(-5) * w has zero gradient in w") {
    Parameter w("w", Role::Theta, Tensor({1}, {1.0}));
    Tape tape;
    const auto root = sum(mul(relu(tape.constant(Tensor({1}, {-5.0}))), tape.parameter(w)));
    tape.backward(root);
    CHECK(w.grad[0] == 0.0);
    const auto f = [](const Tensor& x) { return std::max(-5.0, 0.0) * x[0]; };
    CHECK(std::abs(finite_difference_grad(f, Tensor({1}, {1.0}))[0]) < 1e-12);
  }
  SUBCASE("non-scalar root is rejected") {
    Tape tape;
    const auto x = tape.input(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  SUBCASE("unreached inputs get zero gradient") {
    Tape tape;
    const auto x = tape.input(Tensor({2}, {1, 2}));
    const auto y = tape.input(Tensor({2}, {1, 2}));
    tape.backward(sum(x));
    CHECK(tape.grad(y).values() == std::vector<double>{0, 0});
  }
  SUBCASE("ReLU subgradient at zero is zero") {
    Tape tape;
    const auto x = tape.input(Tensor({3}, {-1, 0, 2}));
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x).values() == std::vector<double>{0, 0, 1});
  }
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  Parameter w("w", Role::Theta, Tensor({1}, {2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.parameter(w), 3.0)));
  }
  CHECK(w.grad[0] == 6.0);
  w.zero_grad();
  CHECK(w.grad[0] == 0.0);
}

TEST_CASE("finite differences") {
  const auto sq = [](const Tensor& x) {
    double s = 0;
    for (double v : x.data()) s += v * v;
    return s;
  };
  const Tensor g = finite_difference_grad(sq, Tensor({2}, {1, 2}));
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
  const Tensor z = finite_difference_grad([](const Tensor&) { return 7.0; }, Tensor({2}, {1, 2}));
  CHECK(z.values() == std::vector<double>{0, 0});

  CHECK(relative_error(Tensor({2}, {1, 0}), Tensor({2}, {1, 0})) == 0.0);
  CHECK(relative_error(Tensor({2}, {0, 0}), Tensor({2}, {0, 0})) == 0.0);
  CHECK(relative_error(Tensor({1}, {1}), Tensor({1}, {2})) == doctest::Approx(0.5));
}

TEST_CASE("gradient check: core ops at 10 random points") {
  const Shape s{3, 4};
  CHECK(worst_grad_error([](Tape&, const std::vector<Var>& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {s, s},
                         10, 1) < 1e-4);
  CHECK(worst_grad_error([](Tape&, const std::vector<Var>& v) { return sum(mul(sub(v[0], v[1]), v[1])); }, {s, s},
                         10, 2) < 1e-4);
  CHECK(worst_grad_error(
            [](Tape&, const std::vector<Var>& v) {
              const Var p = matmul(v[0], v[1]);
              return mean(mul(p, p));
            },
            {{3, 4}, {4, 2}}, 10, 3) < 1e-4);
  Rng rng(9);
  const Tensor w = random_tensor({3, 4}, rng);
  CHECK(worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(sigmoid(scale(v[0], 2.0)), w); },
                         {s}, 10, 4) < 1e-4);
  // keep inputs away from the kink so the central difference is valid
  CHECK(worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(relu(v[0]), w); }, {s}, 10, 5,
                         0.05, 1.0) < 1e-4);
  CHECK(worst_grad_error([&](Tape&, const std::vector<Var>& v) { return contract(relu(v[0]), w); }, {s}, 10, 6,
                         -1.0, -0.05) < 1e-4);
  const std::vector<double> ws{0.5, -1.0, 2.0, 0.25};
  CHECK(worst_grad_error(
            [&](Tape&, const std::vector<Var>& v) {
              const Var r = reshape(v[0], {4});
              return weighted_sum(mul(r, r), ws);
            },
            {{2, 2}}, 10, 7) < 1e-4);
}

TEST_CASE("backward is linear in the root") {
  Rng rng(11);
  const Tensor x0 = random_tensor({5}, rng);
  const Tensor w = random_tensor({5}, rng);
  auto grad_of = [&](int which) {
    Tape tape;
    const Var x = tape.input(x0);
    const Var l1 = sum(mul(sigmoid(x), tape.constant(w)));
    const Var l2 = mean(mul(x, x));
    tape.backward(which == 0 ? l1 : which == 1 ? l2 : add(l1, l2));
    return tape.grad(x);
  };
  const Tensor g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < 5; ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("forward results are bit-identical across runs") {
  Rng rng(12);
  const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({6, 3}, rng);
  auto run = [&] {
    Tape tape;
    return sigmoid(matmul(tape.constant(a), tape.constant(b))).value();
  };
  CHECK(run() == run());
}
