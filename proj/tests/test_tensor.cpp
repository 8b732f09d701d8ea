#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/grad_check.hpp"
#include "vbkt/tensor.hpp"

using namespace vbkt;

TEST_CASE("tensor construction rejects bad input") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
  CHECK_THROWS_AS(Tensor::vector({1.0, NAN}), NumericError);
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS(Tensor::vector({1, 2}).item());
}

TEST_CASE("copies share storage, clone does not") {
  Tensor a = Tensor::vector({1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  CHECK(a.same_storage(b));
  CHECK_FALSE(a.same_storage(c));
  a.mutable_values()[0] = 7;
  CHECK(b[0] == 7);
  CHECK(c[0] == 1);
}

TEST_CASE("forward values of the op set") {
  Tape tape = Tape::no_grad();
  const Tensor a = Tensor::matrix(2, 2, {1, -2, 3, 4});
  const Tensor b = Tensor::matrix(2, 1, {1, 1});
  CHECK(tape.matmul(a, b).values()[0] == -1);
  CHECK(tape.matmul(a, b).values()[1] == 7);
  const Tensor row = tape.add_bias(a, Tensor::vector({10, 20}));
  CHECK(row.at(1, 1) == 24);
  CHECK(tape.add_bias(a, Tensor::scalar(1), -2).at(0, 0) == -1);
  CHECK(tape.relu(a).at(0, 1) == 0);
  CHECK(tape.square(a).at(0, 1) == 4);
  CHECK(tape.sum(a).item() == 6);
  CHECK(tape.sum(a, 0).values()[1] == 2);
  CHECK(tape.sum(a, 1).values()[1] == 7);
  CHECK(tape.mean(a).item() == 1.5);
  CHECK(tape.weighted_sum(a, Tensor::matrix(2, 2, {1, 0, 0, 2})).item() == 9);
  CHECK(tape.log(Tensor::scalar(std::exp(2.0))).item() == doctest::Approx(2.0));

  const Tensor s = tape.softmax(Tensor::matrix(1, 2, {std::log(3.0), 0.0}));
  CHECK(s.values()[0] == doctest::Approx(0.75));
  const Tensor ls = tape.log_softmax(Tensor::matrix(1, 2, {std::log(3.0), 0.0}));
  CHECK(ls.values()[1] == doctest::Approx(std::log(0.25)));
  const Tensor hot = tape.softmax(Tensor::matrix(1, 2, {2.0, 0.0}), 2.0);
  CHECK(hot.values()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));

  const Tensor h = tape.huber(Tensor::vector({3, 0.5, 1}), Tensor::vector({0, 0, 0}));
  CHECK(h.values()[0] == 2.5);
  CHECK(h.values()[1] == 0.125);
  CHECK(h.values()[2] == 0.5);
}

TEST_CASE("shape errors") {
  Tape tape;
  CHECK_THROWS_AS(tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(tape.add_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(tape.huber(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(tape.sum(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST_CASE("log of a nonpositive value is a numeric error") {
  Tape tape;
  CHECK_THROWS_AS(tape.log(Tensor::vector({1.0, 0.0})), NumericError);
}

TEST_CASE("op kind names round-trip") {
  for (OpKind k : {OpKind::matmul, OpKind::add_bias, OpKind::relu, OpKind::softmax, OpKind::log, OpKind::square,
                   OpKind::sum, OpKind::mean, OpKind::huber, OpKind::sample_gaussian}) {
    CHECK(op_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(op_kind_from_string("conv"), std::invalid_argument);
}

TEST_CASE("apply dispatches to the typed ops") {
  Tape tape = Tape::no_grad(3);
  const Tensor a = Tensor::matrix(2, 2, {0.5, -1, 2, 0.25});
  const Tensor via_apply = tape.apply(OpKind::softmax, std::vector<Tensor>{a}, OpParams{.temperature = 2.0});
  const Tensor direct = tape.softmax(a, 2.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(via_apply[i] == direct[i]);
  const Tensor lsm = tape.apply(OpKind::softmax, std::vector<Tensor>{a}, OpParams{.log_output = true});
  CHECK(lsm[0] == tape.log_softmax(a)[0]);
}

TEST_CASE("sum of squares gradient is exact") {
  const ScalarFn f = [](Tape& t, const Tensor& x) { return t.sum(t.square(x)); };
  const GradCheckReport r = grad_check(f, Tensor::vector({1, 2, 3}), 1e-5, 1e-4);
  CHECK(r.pass);
  CHECK(r.analytic == std::vector<double>{2, 4, 6});
}

TEST_CASE("composites of the op set pass finite differences") {
  std::mt19937_64 rng(11);
  const Tensor w = oracle::uniform_tensor(rng, {3, 4}, -1, 1);
  const Tensor b = oracle::uniform_tensor(rng, {4}, -1, 1);
  const Tensor target = oracle::uniform_tensor(rng, {2, 4}, -1, 1);
  const Tensor weights = oracle::uniform_tensor(rng, {2, 4}, 0, 1);
  const ScalarFn f = [&](Tape& t, const Tensor& x) {
    const Tensor h = t.add_bias(t.matmul(x, w), b);
    const Tensor p = t.softmax(t.relu(h), 1.5);
    const Tensor l = t.log_softmax(h, 0.7);
    const Tensor z = t.sample_gaussian(h, 0.3);
    const Tensor hub = t.sum(t.huber(z, target));
    const Tensor mix = t.add_bias(t.weighted_sum(l, weights), t.mean(t.log(p)), 0.5);
    return t.add_bias(t.add_bias(mix, hub), t.sum(t.square(h), -1, 0.1));
  };
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = oracle::uniform_tensor(rng, {2, 3}, -2, 2);
    const GradCheckReport r = grad_check(f, x, 1e-5, 1e-4, trial);
    CHECK_MESSAGE(r.pass, "max rel error " << r.max_rel_error);
  }
}

TEST_CASE("gradient through a sampled sigma tensor") {
  const Tensor mu = Tensor::matrix(2, 2, {0.1, 0.2, -0.3, 0.4});
  const ScalarFn f = [&](Tape& t, const Tensor& s) { return t.sum(t.square(t.sample_gaussian(mu, s))); };
  CHECK(grad_check(f, Tensor::matrix(2, 2, {0.5, 1.0, 1.5, 2.0}), 1e-5, 1e-4, 9).pass);
}

TEST_CASE("backward is linear") {
  std::mt19937_64 rng(5);
  const Tensor x0 = oracle::uniform_tensor(rng, {3}, -1, 1);
  auto grad_of = [&](double a, double b) {
    Tensor x = x0.clone();
    Tensor xr(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    Tape t(1);
    const Tensor f = t.sum(t.square(xr));
    const Tensor g = t.sum(t.relu(xr));
    const Tensor y = t.add_bias(t.add_bias(Tensor::scalar(0.0), f, a), g, b);
    t.backward(y);
    return std::vector<double>(xr.grad().begin(), xr.grad().end());
  };
  const auto gf = grad_of(1, 0), gg = grad_of(0, 1), both = grad_of(2.5, -1.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(both[i] - (2.5 * gf[i] - 1.5 * gg[i])) < 1e-10);
}

TEST_CASE("tape lifecycle") {
  Tensor x = Tensor::vector({1, 2}, true);
  Tape t;
  const Tensor y = t.sum(t.square(x));
  CHECK(t.size() == 2);
  t.backward(y);
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(y), std::logic_error);
  CHECK_THROWS_AS(t.square(x), std::logic_error);

  // Leaf gradients accumulate across tapes until zero_grad.
  Tape t2;
  t2.backward(t2.sum(t2.square(x)));
  CHECK(x.grad()[1] == 8);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());

  Tape t3;
  CHECK_THROWS_AS(t3.backward(t3.square(x)), ShapeError);
  CHECK_THROWS_AS(t3.backward(t3.sum(Tensor::vector({1, 2}))), std::logic_error);
}

TEST_CASE("no_grad tapes record nothing") {
  Tensor x = Tensor::vector({1, 2}, true);
  Tape t = Tape::no_grad();
  const Tensor y = t.sum(t.square(x));
  CHECK(t.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("sampling is keyed by seed, step and call index") {
  const Tensor mu = Tensor::zeros({4});
  Tape a(7, 3), b(7, 3), c(7, 4);
  const Tensor za = a.sample_gaussian(mu, 1.0);
  const Tensor zb = b.sample_gaussian(mu, 1.0);
  const Tensor zc = c.sample_gaussian(mu, 1.0);
  const Tensor za2 = a.sample_gaussian(mu, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(za[i] == zb[i]);
    CHECK(za[i] == oracle::eps(7, 3, 0, i));
    CHECK(za2[i] == oracle::eps(7, 3, 1, i));
  }
  CHECK(za[0] != zc[0]);
  CHECK(a.stochastic_calls() == 2);
}

TEST_CASE("counter rng draws look standard normal") {
  double s = 0, ss = 0;
  const std::size_t n = 200000;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = normal_at(RngKey{1, 2, 3}, k);
    s += e;
    ss += e * e;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(ss / n - 1.0) < 0.02);
  CounterRng r(4);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
}
