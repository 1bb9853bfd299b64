#include <doctest.h>

#include <cmath>

#include "h4w/autodiff.hpp"
#include "h4w/error.hpp"
#include "h4w/gradcheck.hpp"
#include "h4w/random.hpp"

using namespace h4w;
using namespace h4w::ad;

namespace {

Tensor rand_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed irregular weights so every output entry matters.
Var weighted_sum(Var v) {
  Tensor w(v.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.3 * static_cast<double>(i) + 0.4);
  return sum(mul_const(v, w));
}

void expect_grad_ok(const ScalarFn& f, const std::vector<Tensor>& inputs, double tol = 1e-6) {
  const auto report = grad_check(f, inputs, {.h = 1e-6, .tol = tol});
  INFO(describe(report));
  CHECK(report.passed);
}

}  // namespace

TEST_CASE("elementwise and shape primitives have correct gradients") {
  Rng rng(1);
  const Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(add(in[0], in[1])); }, {a, b});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(sub(in[0], in[1])); }, {a, b});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(mul(in[0], in[1])); }, {a, b});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(scale(in[0], -2.5)); }, {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(ad::exp(in[0])); }, {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(softmax(in[0])); }, {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(concat({in[0], in[1]}, 1)); }, {a, b});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(concat({in[0], in[1]}, 0)); }, {a, b});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(slice(in[0], 1, 1, 2)); }, {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(reshape(in[0], {2, 6})); }, {a});
  expect_grad_ok(
      [](Tape&, std::span<const Var> in) {
        const int rows[] = {2, 0, 2};
        return weighted_sum(gather_rows(in[0], rows));
      },
      {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return mean(in[0]); }, {a});
}

TEST_CASE("relu and l1 gradients away from kinks") {
  Rng rng(2);
  Tensor a = rand_tensor(rng, {10});
  for (double& x : a.data) x += x > 0 ? 0.1 : -0.1;
  const Tensor b = rand_tensor(rng, {10});
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = b[i] + (i % 2 ? 0.3 : -0.3);
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(relu(in[0])); }, {a});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return l1_loss(in[0], in[1]); }, {c, b});
}

TEST_CASE("l1 loss uses a zero subgradient at equality") {
  Tape t;
  Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
  Var b = t.leaf(Tensor({2}, {1.0, 3.0}));
  Var l = l1_loss(a, b);
  CHECK(l.item() == doctest::Approx(0.5));
  t.backward(l);
  CHECK(t.grad(a) == std::vector<double>{0.0, -0.5});
}

TEST_CASE("matmul, linear, conv2d and pooling gradients") {
  Rng rng(3);
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(matmul(in[0], in[1])); },
                 {rand_tensor(rng, {3, 5}), rand_tensor(rng, {5, 2})});
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(linear(in[0], in[1], in[2])); },
                 {rand_tensor(rng, {2, 3}), rand_tensor(rng, {4, 6}), rand_tensor(rng, {4})});
  for (int k : {1, 3})
    for (int stride : {1, 2}) {
      CAPTURE(k);
      CAPTURE(stride);
      expect_grad_ok([stride](Tape&, std::span<const Var> in) { return weighted_sum(conv2d(in[0], in[1], in[2], stride)); },
                     {rand_tensor(rng, {3, 5, 6}), rand_tensor(rng, {4, 3, k, k}), rand_tensor(rng, {4})});
    }
  expect_grad_ok([](Tape&, std::span<const Var> in) { return weighted_sum(mean_pool_spatial(in[0])); },
                 {rand_tensor(rng, {3, 4, 5})});
}

TEST_CASE("conv2d matches a direct convolution oracle") {
  Rng rng(4);
  const Tensor x = rand_tensor(rng, {2, 5, 7}), w = rand_tensor(rng, {3, 2, 3, 3}), b = rand_tensor(rng, {3});
  for (int stride : {1, 2}) {
    Tape t;
    const Tensor y = conv2d(t.constant(x), t.constant(w), t.constant(b), stride).value();
    const int oh = (5 + stride - 1) / stride, ow = (7 + stride - 1) / stride;
    REQUIRE(y.shape == Shape{3, oh, ow});
    for (int o = 0; o < 3; ++o)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double s = b[static_cast<std::size_t>(o)];
          for (int ci = 0; ci < 2; ++ci)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = r * stride + dy, xx = c * stride + dx;
                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 7) continue;
                s += w[static_cast<std::size_t>(((o * 2 + ci) * 3 + dy + 1) * 3 + dx + 1)] *
                     x[static_cast<std::size_t>((ci * 5 + yy) * 7 + xx)];
              }
          CHECK(y[static_cast<std::size_t>((o * oh + r) * ow + c)] == doctest::Approx(s).epsilon(1e-12));
        }
  }
}

TEST_CASE("softmax is shift invariant and sums to one") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}, {1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0}));
  const Tensor s = softmax(a).value();
  for (int r = 0; r < 2; ++r) {
    double total = 0;
    for (int c = 0; c < 3; ++c) total += s[static_cast<std::size_t>(3 * r + c)];
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK(std::isfinite(s[0]));
}

TEST_CASE("tape error contract") {
  SUBCASE("backward twice") {
    Tape t;
    Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
    Var l = sum(a);
    t.backward(l);
    CHECK(t.consumed());
    try {
      t.backward(l);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DetachedGraph);
    }
  }
  SUBCASE("non-scalar loss") {
    Tape t;
    Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
    try {
      t.backward(a);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotScalar);
    }
  }
  SUBCASE("mixing tapes") {
    Tape t1, t2;
    Var a = t1.leaf(Tensor({2}, 1.0));
    Var b = t2.leaf(Tensor({2}, 1.0));
    try {
      (void)add(a, b);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DetachedGraph);
    }
  }
  SUBCASE("shape mismatch") {
    Tape t;
    try {
      (void)add(t.leaf(Tensor({2}, 1.0)), t.leaf(Tensor({3}, 1.0)));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
  }
}

TEST_CASE("detach and constants block gradient flow") {
  Tape t;
  Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
  Var c = t.constant(Tensor({2}, {3.0, 4.0}));
  Var l = sum(add(mul(detach(a), c), a));
  t.backward(l);
  CHECK(t.grad(a) == std::vector<double>{1.0, 1.0});
  CHECK(t.grad(c) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradients accumulate over fan-out") {
  Tape t;
  Var a = t.leaf(Tensor({1}, {3.0}));
  Var l = sum(add(mul(a, a), scale(a, 2.0)));
  t.backward(l);
  CHECK(t.grad(a)[0] == doctest::Approx(8.0));
}

TEST_CASE("grad_check detects a wrong backward") {
  ScalarFn wrong = [](Tape& t, std::span<const Var> in) {
    Var x = in[0];
    Var y = t.record(Tensor(x.shape(), 0.0), {x.id}, [id = x.id](Tape& tp, int self) {
      auto g = tp.incoming(self);
      auto& gx = tp.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * g[i];
    });
    Tensor v = x.value();
    for (double& e : v.data) e = 3.0 * e;
    return sum(add(y, t.constant(v)));
  };
  const auto rep = grad_check(wrong, {Tensor({3}, {1.0, 2.0, 3.0})});
  CHECK_FALSE(rep.passed);
}
