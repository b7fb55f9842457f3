#include <doctest.h>

#include <cmath>

#include "sgl/autodiff.hpp"
#include "sgl/error.hpp"
#include "sgl/params.hpp"
#include "support.hpp"

using namespace sgl;
using sgl::test::numeric_gradient;
using sgl::test::rel_error;
using sgl::test::to_vec;

namespace {

// Gradient of a unary primitive reduced by sum, analytic and numeric.
void check_unary(Tensor (*op)(const Tensor&), const Shape& shape, std::uint64_t seed, double scale) {
  Rng rng(seed);
  const auto x0 = sgl::test::random_values(rng, numel(shape), scale);
  Shape out_shape;
  {
    Tape t;
    out_shape = op(t.constant(shape, x0)).shape();
  }
  const auto weights = sgl::test::random_values(rng, numel(out_shape));
  auto f = [&](const std::vector<double>& x) {
    Tape t;
    auto v = t.constant(shape, x);
    return sum(mul(op(v), t.constant(out_shape, weights))).item();
  };
  Tape t;
  auto v = t.variable(shape, x0);
  auto out = sum(mul(op(v), t.constant(out_shape, weights)));
  const Tensor leaves[] = {v};
  const auto g = t.gradient(out, leaves)[0];
  CHECK(rel_error(g, numeric_gradient(f, x0, 1e-6)) <= 1e-6);
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  auto s = softmax(t.constant({3}, {0, 0, 0}));
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax([ln 2, 0]) = [2/3, 1/3]") {
  Tape t;
  auto s = softmax(t.constant({2}, {std::log(2.0), 0.0}));
  CHECK(std::abs(s.at(0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(s.at(1) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("matmul by identity") {
  Tape t;
  auto m = matmul(t.constant({2, 2}, {1, 2, 3, 4}), t.constant({2, 2}, {1, 0, 0, 1}));
  CHECK(to_vec(m.values()) == std::vector<double>{1, 2, 3, 4});
  CHECK(m.shape() == Shape{2, 2});
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tape t;
  auto a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = t.constant({2, 3}, std::vector<double>(6, 1.0));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, t.constant({2}, {1, 2})), ShapeError);
}

TEST_CASE("gradient of half squared norm") {
  Tape t;
  auto w = t.variable({2}, {3, 4});
  auto f = scale(sum(mul(w, w)), 0.5);
  const Tensor leaves[] = {w};
  CHECK(t.gradient(f, leaves)[0] == std::vector<double>{3, 4});
}

TEST_CASE("gradient of a function constant in w is zero") {
  Tape t;
  auto w = t.variable({3}, {1, 2, 3});
  auto c = t.variable({1}, {5});
  auto f = sum(mul(c, c));
  const Tensor leaves[] = {w};
  CHECK(t.gradient(f, leaves)[0] == std::vector<double>{0, 0, 0});
}

TEST_CASE("tanh gradient against closed form and central difference") {
  const double w0 = 0.5;
  Tape t;
  auto w = t.variable({}, {w0});
  auto f = tanh(w);
  const Tensor leaves[] = {w};
  const double g = t.gradient(f, leaves)[0][0];
  const double closed = 1.0 - std::tanh(w0) * std::tanh(w0);
  const double h = 1e-6;
  const double fd = (std::tanh(w0 + h) - std::tanh(w0 - h)) / (2 * h);
  CHECK(std::abs(g - closed) <= 1e-15);
  CHECK(std::abs(g - fd) / std::abs(fd) <= 1e-7);
}

TEST_CASE("grad wrt selected parameters") {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("w", {2});
  auto alayout = std::make_shared<ParamLayout>();
  alayout->add("a", {});

  SUBCASE("a * 0.5 |w|^2 wrt a at w = (1,1), a = 2") {
    Tape t;
    auto w = bind_constant(t, ParamVector(layout, {1, 1}));
    auto a = bind_variable(t, ParamVector(alayout, {2}));
    auto f = scale(mul(a["a"], sum(mul(w["w"], w["w"]))), 0.5);
    CHECK(grad(f, a)[0] == 1.0);
  }
  SUBCASE("loss independent of the set gives zeros") {
    Tape t;
    auto w = bind_variable(t, ParamVector(layout, {1, 1}));
    auto a = bind_variable(t, ParamVector(alayout, {2}));
    auto f = mul(a["a"], a["a"]);
    CHECK(grad(f, w).values() == std::vector<double>{0, 0});
  }
  SUBCASE("a * w^3 at w = 2, a = 1 wrt w is 12") {
    auto l1 = std::make_shared<ParamLayout>();
    l1->add("w", {});
    Tape t;
    auto w = bind_variable(t, ParamVector(l1, {2}));
    auto a = bind_constant(t, ParamVector(alayout, {1}));
    auto f = mul(a["a"], mul(w["w"], mul(w["w"], w["w"])));
    const double g = grad(f, w)[0];
    CHECK(g == doctest::Approx(12.0).epsilon(1e-14));
    const double h = 1e-6;
    const double fd = ((2 + h) * (2 + h) * (2 + h) - (2 - h) * (2 - h) * (2 - h)) / (2 * h);
    CHECK(std::abs(g - fd) / 12.0 <= 1e-8);
  }
}

TEST_CASE("every primitive matches central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    check_unary(&sgl::tanh, {3, 4}, seed, 1.0);
    check_unary(&softmax, {3, 4}, seed, 1.0);
    check_unary(&sum, {5}, seed, 1.0);
    check_unary(&mean, {2, 3}, seed, 1.0);
    // Away from the kink and from the log clamp.
    check_unary(&relu, {6}, seed, 1.0);
    check_unary(
        +[](const Tensor& x) { return sgl::log(add(mul(x, x), x.tape()->constant(x.shape(), std::vector<double>(x.size(), 0.5)))); },
        {4}, seed, 1.0);

    Rng rng(seed + 100);
    const auto a0 = sgl::test::random_values(rng, 6);
    const auto b0 = sgl::test::random_values(rng, 12);
    const auto k0 = sgl::test::random_values(rng, 3);
    const auto r0 = sgl::test::random_values(rng, 8);
    // matmul, add_row broadcast, sub, scale by tensor, conv1d, pick.
    auto build = [&](Tape& t, const Tensor& a, const Tensor& b, const Tensor& k) {
      auto m = matmul(a, b);                                                  // [2,4]
      auto m2 = add(m, t.constant({4}, {0.1, -0.2, 0.3, 0.4}));               // row broadcast
      auto c = conv1d(m2, k);                                                 // [2,4]
      auto s = sub(c, scale(m2, pick(k, 1)));
      return sum(mul(s, t.constant({2, 4}, r0)));
    };
    auto fa = [&](const std::vector<double>& x) {
      Tape t;
      return build(t, t.constant({2, 3}, x), t.constant({3, 4}, b0), t.constant({3}, k0)).item();
    };
    auto fb = [&](const std::vector<double>& x) {
      Tape t;
      return build(t, t.constant({2, 3}, a0), t.constant({3, 4}, x), t.constant({3}, k0)).item();
    };
    auto fk = [&](const std::vector<double>& x) {
      Tape t;
      return build(t, t.constant({2, 3}, a0), t.constant({3, 4}, b0), t.constant({3}, x)).item();
    };
    Tape t;
    auto a = t.variable({2, 3}, a0);
    auto b = t.variable({3, 4}, b0);
    auto k = t.variable({3}, k0);
    const Tensor leaves[] = {a, b, k};
    const auto g = t.gradient(build(t, a, b, k), leaves);
    CHECK(rel_error(g[0], numeric_gradient(fa, a0, 1e-6)) <= 1e-6);
    CHECK(rel_error(g[1], numeric_gradient(fb, b0, 1e-6)) <= 1e-6);
    CHECK(rel_error(g[2], numeric_gradient(fk, k0, 1e-6)) <= 1e-6);
  }
}

TEST_CASE("log is clamped and has zero gradient below the floor") {
  Tape t;
  auto x = t.variable({2}, {0.0, 1.0});
  auto y = sgl::log(x);
  CHECK(y.at(0) == std::log(log_floor));
  const Tensor leaves[] = {x};
  const auto g = t.gradient(sum(y), leaves)[0];
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
}

TEST_CASE("linearity of the gradient") {
  Rng rng(42);
  const auto x0 = sgl::test::random_values(rng, 5);
  const double alpha = 0.7, beta = -1.3;
  auto grad_of = [&](double ca, double cb) {
    Tape t;
    auto x = t.variable({5}, x0);
    auto f = sum(tanh(x));
    auto g = sum(mul(softmax(x), x));
    auto h = add(scale(f, ca), scale(g, cb));
    const Tensor leaves[] = {x};
    return t.gradient(h, leaves)[0];
  };
  const auto combined = grad_of(alpha, beta);
  const auto gf = grad_of(1, 0), gg = grad_of(0, 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(combined[i] - (alpha * gf[i] + beta * gg[i])) <= 1e-10);
}

TEST_CASE("identical tapes give bitwise identical gradients") {
  Rng rng(9);
  const auto x0 = sgl::test::random_values(rng, 12);
  auto run = [&] {
    Tape t;
    auto x = t.variable({3, 4}, x0);
    auto y = sum(mul(softmax(tanh(x)), x));
    const Tensor leaves[] = {x};
    return t.gradient(y, leaves)[0];
  };
  CHECK(run() == run());
}

TEST_CASE("gradient requires a scalar output") {
  Tape t;
  auto x = t.variable({2}, {1, 2});
  const Tensor leaves[] = {x};
  CHECK_THROWS_AS(t.gradient(x, leaves), ShapeError);
}

TEST_CASE("f32 precision rounds values to float") {
  Tape t(Precision::f32);
  auto x = t.constant({}, {0.1});
  auto y = scale(x, 3.0);
  CHECK(y.item() == static_cast<double>(static_cast<float>(static_cast<double>(static_cast<float>(0.1)) * 3.0)));
  CHECK(parse_precision("f32") == Precision::f32);
  CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
}
