#include <doctest.h>

#include <cmath>
#include <random>

#include "uap/error.hpp"
#include "uap/ndgrad.hpp"

using namespace uap;
using namespace uap::nd;

namespace {

Array random_array(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Array a = Array::zeros(std::move(s));
  for (double& v : a.data) v = d(rng);
  return a;
}

}  // namespace

TEST_CASE("array shape must match data length") {
  CHECK_THROWS_AS(Array({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK(Array({2, 3}, std::vector<double>(6)).size() == 6);
  CHECK(numel({}) == 1);
}

TEST_CASE("matmul hand examples") {
  Tape t;
  const Tensor a = t.leaf(Array({2, 2}, {1, 2, 3, 4}));
  const Tensor b = t.leaf(Array({2, 2}, {5, 6, 7, 8}));
  const Tensor eye = t.leaf(Array({2, 2}, {1, 0, 0, 1}));
  CHECK(t.matmul(a, b).value() == Array({2, 2}, {19, 22, 43, 50}));
  CHECK(t.matmul(eye, b).value() == b.value());
  CHECK(t.matmul(b, eye).value() == b.value());
}

TEST_CASE("matmul identity is bit exact on random input") {
  Tape t;
  const Array a = random_array({4, 4}, 3);
  Array eye = Array::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.data[i * 5] = 1.0;
  const Tensor ta = t.leaf(a);
  const Tensor te = t.leaf(eye);
  CHECK(t.matmul(te, ta).value() == a);
  CHECK(t.matmul(ta, te).value() == a);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape t;
  const Tensor a = t.leaf(Array::zeros({2, 3}));
  const Tensor b = t.leaf(Array::zeros({2, 3}));
  try {
    t.matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(a, t.leaf(Array::zeros({3, 2}))), DimensionError);
  CHECK_THROWS_AS(t.mul(a, t.leaf(Array::zeros({6}))), DimensionError);
}

TEST_CASE("elementwise activations at zero") {
  Tape t;
  const Tensor z = t.leaf(Array({1}, {0.0}), true);
  CHECK(t.sigmoid(z).item() == 0.5);
  CHECK(t.tanh(z).item() == 0.0);
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  Tape t;
  const Tensor x = t.leaf(Array({1}, {0.0}), true);
  t.backward(t.sum(t.sigmoid(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  const auto fd = finite_diff_check([](Tape& tp, Tensor v) { return tp.sum(tp.sigmoid(v)); },
                                    Array({1}, {0.0}));
  CHECK(fd.passed);
}

TEST_CASE("mse loss hand examples") {
  Tape t;
  const Tensor pred = t.leaf(Array({1}, {2.0}), true);
  const Tensor target = t.leaf(Array({1}, {0.0}));
  const Tensor loss = t.mse_loss(pred, target);
  CHECK(loss.item() == 4.0);
  t.backward(loss);
  CHECK(pred.grad()[0] == 4.0);

  Tape t2;
  const Tensor same = t2.leaf(Array({3}, {1, 2, 3}));
  CHECK(t2.mse_loss(same, same).item() == 0.0);
  CHECK_THROWS_AS(t2.mse_loss(t2.leaf(Array::zeros({0})), t2.leaf(Array::zeros({0}))),
                  DomainError);
}

TEST_CASE("mse of scalar product has the analytic gradient") {
  const double w = 1.7, x = -0.4, y = 0.9;
  Tape t;
  const Tensor tw = t.leaf(Array({1, 1}, {w}));
  const Tensor tx = t.leaf(Array({1, 1}, {x}), true);
  const Tensor ty = t.leaf(Array({1, 1}, {y}));
  t.backward(t.mse_loss(t.matmul(tw, tx), ty));
  CHECK(tx.grad()[0] == doctest::Approx(2 * w * (w * x - y)).epsilon(1e-14));
}

TEST_CASE("sum gives a ones gradient") {
  Tape t;
  const Tensor x = t.leaf(random_array({5}, 1), true);
  t.backward(t.sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward contract") {
  Tape t;
  const Tensor x = t.leaf(Array({2}, {1, 2}), true);
  CHECK_THROWS_AS(t.backward(x), UsageError);  // not scalar
  const Tensor s = t.sum(x);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), UsageError);  // write-once

  Tape other;
  const Tensor detached = other.leaf(Array({1}, {1.0}));
  Tape t3;
  CHECK_THROWS_AS(t3.backward(detached), UsageError);
  Tape t4;
  const Tensor plain = t4.leaf(Array({1}, {1.0}));
  CHECK_THROWS_AS(t4.backward(t4.sum(plain)), UsageError);
}

TEST_CASE("gradients flow only to inputs that require them") {
  Tape t;
  const Tensor a = t.leaf(Array({2}, {1, 2}), true);
  const Tensor b = t.leaf(Array({2}, {3, 4}));
  t.backward(t.sum(t.mul(a, b)));
  CHECK(a.has_grad());
  CHECK_FALSE(b.has_grad());
  CHECK(a.grad()[0] == 3.0);
  CHECK(a.grad()[1] == 4.0);
}

TEST_CASE("finite differences agree for every primitive op") {
  const Array b = random_array({3, 4}, 11);
  const Array bias = random_array({4}, 12);
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"matmul", [&](Tape& t, Tensor x) { return t.sum(t.matmul(x, t.leaf(b))); }},
      {"add", [&](Tape& t, Tensor x) { return t.sum(t.mul(t.add(x, x), x)); }},
      {"sub", [&](Tape& t, Tensor x) { return t.sum(t.mul(t.sub(x, t.scale(x, 0.3)), x)); }},
      {"sigmoid", [&](Tape& t, Tensor x) { return t.sum(t.sigmoid(x)); }},
      {"tanh", [&](Tape& t, Tensor x) { return t.sum(t.mul(t.tanh(x), x)); }},
      {"bias", [&](Tape& t, Tensor x) {
         const Tensor y = t.add_row_bias(t.matmul(x, t.leaf(b)), t.leaf(bias));
         return t.sum(t.mul(y, y));
       }},
      {"slice", [&](Tape& t, Tensor x) {
         const Tensor s = t.slice_cols(x, 1, 2);
         return t.sum(t.mul(s, s));
       }},
      {"mse", [&](Tape& t, Tensor x) {
         return t.mse_loss(t.tanh(x), t.leaf(Array::filled({2, 3}, 0.2)));
       }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const auto res = finite_diff_check(f, random_array({2, 3}, 21));
    CHECK(res.passed);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences of matmul sum meet 1e-6") {
  const Array b = random_array({3, 3}, 5);
  const auto res = finite_diff_check(
      [&](Tape& t, Tensor x) { return t.sum(t.matmul(x, t.leaf(b))); }, random_array({3, 3}, 6),
      1e-5, 1e-6);
  CHECK(res.passed);
}

TEST_CASE("time_step picks one step of a batch of sequences") {
  Tape t;
  Array seq = Array::zeros({2, 3, 2});
  for (std::size_t i = 0; i < seq.size(); ++i) seq.data[i] = static_cast<double>(i);
  const Tensor s = t.leaf(seq, true);
  const Tensor step = t.time_step(s, 1);
  CHECK(step.value() == Array({2, 2}, {2, 3, 8, 9}));
  CHECK(finite_diff_check([](Tape& tp, Tensor x) {
          const Tensor a = tp.time_step(x, 2);
          return tp.sum(tp.mul(a, a));
        }, seq).passed);
}

TEST_CASE("sum is exact under finite differences") {
  const auto res = finite_diff_check([](Tape& t, Tensor x) { return t.sum(x); },
                                     random_array({7}, 9));
  CHECK(res.passed);
  CHECK(res.max_rel_error < 1e-9);
}

TEST_CASE("a corrupted backward rule is caught") {
  auto bad_square = [](Tape& t, Tensor x) {
    Array out = x.value();
    for (double& v : out.data) v = v * v;
    const Tensor in[] = {x};
    const Tensor y = t.record(std::move(out), in, [x](Tape& tp, std::span<const double> g) {
      auto dx = tp.grad_buffer(x);
      const auto xv = x.data();
      // Wrong on purpose: should be 2 x g.
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 3.0 * xv[i] * g[i];
    });
    return t.sum(y);
  };
  const auto res = finite_diff_check(bad_square, random_array({4}, 2));
  CHECK_FALSE(res.passed);
  CHECK(res.max_rel_error > 0.1);
}

TEST_CASE("backward is linear in the loss") {
  const Array x0 = random_array({3}, 31);
  auto grad_of = [&](int which) {
    Tape t;
    const Tensor x = t.leaf(x0, true);
    const Tensor l1 = t.sum(t.sigmoid(x));
    const Tensor l2 = t.sum(t.mul(x, t.tanh(x)));
    const Tensor loss = which == 0 ? l1 : (which == 1 ? l2 : t.add(l1, l2));
    t.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-15));
}

TEST_CASE("ops are deterministic") {
  const Array a = random_array({5, 5}, 41);
  auto run = [&] {
    Tape t;
    const Tensor x = t.leaf(a, true);
    const Tensor y = t.tanh(t.matmul(x, t.sigmoid(x)));
    t.backward(t.sum(y));
    return std::make_pair(y.value(), std::vector<double>(x.grad().begin(), x.grad().end()));
  };
  CHECK(run() == run());
}

TEST_CASE("vector kernels match the scalar library") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-30.0, 30.0);
  std::vector<double> v(4001);
  for (double& x : v) x = d(rng);
  v[0] = 0.0;
  v[1] = -800.0;
  v[2] = 800.0;
  std::vector<double> e(v.size());
  blas::vexp(v.data(), e.data(), v.size());
  std::vector<double> s = v, th = v;
  blas::vsigmoid(s.data(), s.size());
  blas::vtanh(th.data(), th.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double ref = std::exp(std::clamp(v[i], -700.0, 700.0));
    CHECK(std::fabs(e[i] - ref) <= 1e-15 * ref);
    CHECK(std::fabs(s[i] - 1.0 / (1.0 + std::exp(-v[i]))) <= 1e-15);
    CHECK(std::fabs(th[i] - std::tanh(v[i])) <= 1e-15);
  }
  CHECK(s[0] == 0.5);
  CHECK(th[0] == 0.0);
}

TEST_CASE("blas products agree with the naive loops") {
  const Array a = random_array({5, 7}, 51);
  const Array b = random_array({7, 3}, 52);
  const Array bq = random_array({3, 7}, 53);
  const Array ap = random_array({5, 3}, 54);
  std::vector<double> c(15, 0.0), cbt(15, 0.0), cat(21, 0.0);
  blas::gemm(5, 7, 3, a.data.data(), b.data.data(), c.data());        // A B
  blas::gemm_bt(5, 3, 7, a.data.data(), bq.data.data(), cbt.data());  // A Bq^T
  blas::gemm_at(5, 7, 3, a.data.data(), ap.data.data(), cat.data());  // A^T Ap
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0, ref_bt = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        ref += a.data[i * 7 + k] * b.data[k * 3 + j];
        ref_bt += a.data[i * 7 + k] * bq.data[j * 7 + k];
      }
      CHECK(c[i * 3 + j] == doctest::Approx(ref).epsilon(1e-13));
      CHECK(cbt[i * 3 + j] == doctest::Approx(ref_bt).epsilon(1e-13));
    }
  }
  for (std::size_t k = 0; k < 7; ++k) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t i = 0; i < 5; ++i) ref += a.data[i * 7 + k] * ap.data[i * 3 + j];
      CHECK(cat[k * 3 + j] == doctest::Approx(ref).epsilon(1e-13));
    }
  }
}
