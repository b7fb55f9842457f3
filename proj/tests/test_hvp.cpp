#include <doctest.h>

#include <cmath>

#include "sgl/hvp.hpp"
#include "support.hpp"

using namespace sgl;

namespace {

LayoutPtr vec_layout(std::size_t n) {
  auto l = std::make_shared<ParamLayout>();
  l->add("x", {1, n});
  return l;
}

ParamVector vec(const LayoutPtr& l, std::vector<double> v) { return ParamVector(l, std::move(v)); }

}  // namespace

TEST_CASE("mixed partial of a * 0.5 |w|^2") {
  const auto lw = vec_layout(2), la = vec_layout(1);
  // held = w, varied = a
  ScalarBuilder L = [](Tape&, const BoundParams& w, const BoundParams& a) {
    return scale(sum(w[0] * w[0]) * 0.5, sum(a[0]));
  };
  const auto r = hvp_fd(L, vec(lw, {1, 2}), vec(la, {0.7}), vec(lw, {1, 0}), 0.01);
  CHECK(std::abs(r[0] - 1.0) <= 1e-10);

  // Swapped roles: differentiate wrt w, shift a. grad_w = a w is linear in a.
  ScalarBuilder L2 = [](Tape&, const BoundParams& a, const BoundParams& w) {
    return scale(sum(w[0] * w[0]) * 0.5, sum(a[0]));
  };
  const auto r2 = hvp_fd(L2, vec(la, {0.7}), vec(lw, {1, 2}), vec(la, {3.0}), 0.01);
  CHECK(std::abs(r2[0] - 3.0) <= 1e-10);
  CHECK(std::abs(r2[1] - 6.0) <= 1e-10);
}

TEST_CASE("zero and tiny directions give exact zeros") {
  const auto lw = vec_layout(2), la = vec_layout(1);
  ScalarBuilder L = [](Tape&, const BoundParams& w, const BoundParams& a) {
    return scale(sum(w[0] * w[0]) * 0.5, sum(a[0]));
  };
  for (double s : {0.0, 1e-13}) {
    const auto r = hvp_fd(L, vec(lw, {1, 2}), vec(la, {0.7}), vec(lw, {s, 0}), 0.01);
    CHECK(r.values() == std::vector<double>{0.0});
  }
}

TEST_CASE("random bilinear-plus-quadratic losses are exact") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 6), m = 1 + uniform_index(rng, 6);
    const auto lx = vec_layout(n), ly = vec_layout(m);
    const auto M = sgl::test::random_values(rng, n * m);
    const auto q = sgl::test::random_values(rng, n);
    // L = x M y^T + sum q x^2 + sum y^3; the y-gradient is affine in x.
    ScalarBuilder L = [&](Tape& t, const BoundParams& x, const BoundParams& y) {
      const Tensor Mt = t.constant({n, m}, M);
      const Tensor qt = t.constant({1, n}, q);
      return sum(matmul(x[0], Mt) * y[0]) + sum(qt * x[0] * x[0]) + sum(y[0] * y[0] * y[0]);
    };
    const auto x = vec(lx, sgl::test::random_values(rng, n));
    const auto y = vec(ly, sgl::test::random_values(rng, m));
    const auto d = vec(lx, sgl::test::random_values(rng, n, std::exp(4.0 * uniform01(rng) - 2.0)));
    const auto r = hvp_fd(L, x, y, d, 0.01);
    std::vector<double> expect(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) expect[j] += d[i] * M[i * m + j];
    CHECK(sgl::test::rel_error(r.values(), expect) <= 1e-10);
  }
}

TEST_CASE("random cubic loss agrees with a finer difference") {
  Rng rng(12);
  const auto l = vec_layout(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = sgl::test::random_values(rng, 5);
    const auto b = sgl::test::random_values(rng, 25);
    // L(p) = sum c p^3 + sum_ij b_ij p_i p_j^2 + sum tanh(p)
    auto field = [&](const ParamVector& p) {
      Tape t;
      auto bp = bind_variable(t, p);
      const Tensor x = bp[0];
      const Tensor B = t.constant({5, 5}, b);
      const Tensor s = sum(t.constant({1, 5}, c) * x * x * x) + sum(matmul(x, B) * x * x) + sum(tanh(x));
      return grad(s, bp);
    };
    const auto p = vec(l, sgl::test::random_values(rng, 5));
    const auto d = vec(l, sgl::test::random_values(rng, 5));
    const auto coarse = hvp_fd(field, p, d, 0.01, l);
    const auto fine = hvp_fd(field, p, d, 0.001, l);
    CHECK(sgl::test::rel_error(coarse.values(), fine.values()) <= 1e-4);
  }
}

TEST_CASE("field form requires matching layouts") {
  const auto l2 = vec_layout(2), l3 = vec_layout(3);
  auto field = [](const ParamVector& p) { return p; };
  CHECK_THROWS_AS(hvp_fd(field, vec(l2, {1, 2}), vec(l3, {1, 2, 3}), 0.01, l2), ShapeError);
}
