#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/model.hpp"

using namespace vbkt;

TEST_CASE("default spec shapes") {
  const LatentSplitModel m = LatentSplitModel::random(ModelSpec{}, 1);
  const auto names = m.parameter_names();
  REQUIRE(names.size() == 8);
  CHECK(names[0] == "theta.0.weight");
  CHECK(names[7] == "omega.0.bias");
  const auto p = m.parameters();
  CHECK(p[0].shape() == Shape{20, 64});
  CHECK(p[4].shape() == Shape{64, 32});
  CHECK(p[6].shape() == Shape{32, 10});
  Tape t = Tape::no_grad();
  CHECK(m.forward_latent(t, Tensor::zeros({5, 20})).shape() == Shape{5, 32});
  CHECK(m.predict_logits(Tensor::zeros({5, 20})).shape() == Shape{5, 10});
}

TEST_CASE("spec validation") {
  ModelSpec s;
  s.latent_dim = 0;
  CHECK_THROWS(s.validate());
  s = ModelSpec{};
  s.num_classes = 1;
  CHECK_THROWS(s.validate());
}

TEST_CASE("he-uniform initialisation, zero biases, seeded") {
  const ModelSpec spec;
  const LatentSplitModel a = LatentSplitModel::random(spec, 3);
  const LatentSplitModel b = LatentSplitModel::random(spec, 3);
  const LatentSplitModel c = LatentSplitModel::random(spec, 4);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
  for (const auto& layer : a.theta_layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.dim(0)));
    for (double w : layer.weight.values()) CHECK(std::abs(w) <= bound);
    for (double v : layer.bias.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("forward matches a straight-line reimplementation") {
  ModelSpec spec = oracle::tiny_spec();
  spec.omega_hidden = {4};
  LatentSplitModel m = LatentSplitModel::random(spec, 8);
  std::mt19937_64 rng(2);
  // non-zero biases so they are exercised
  for (std::size_t i = 1; i < m.parameters().size(); i += 2) {
    const Tensor p = m.parameters()[i];
    m.set_parameter(i, oracle::uniform_tensor(rng, p.shape(), -0.5, 0.5));
  }
  const Tensor x = oracle::uniform_tensor(rng, {6, 4}, -2, 2);
  const Tensor mu = m.predict_latent(x);
  const Tensor logits = m.predict_logits(x);
  bool negative_latent = false;
  for (std::size_t i = 0; i < 6; ++i) {
    oracle::Vec xi(4);
    for (std::size_t j = 0; j < 4; ++j) xi[j] = x.at(i, j);
    const auto z = oracle::latent(m, xi);
    const auto y = oracle::logits(m, z);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(mu.at(i, j) == doctest::Approx(z[j]).epsilon(1e-12));
      negative_latent |= z[j] < 0;
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(logits.at(i, j) == doctest::Approx(y[j]).epsilon(1e-12));
  }
  CHECK(negative_latent);  // the latent layer is pre-activation
}

TEST_CASE("reparameterized pass") {
  const LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 2);
  std::mt19937_64 rng(3);
  const Tensor x = oracle::uniform_tensor(rng, {4, 4}, -1, 1);
  Tape t(5, 6);
  const TrainForward f = m.forward_train(t, x, Tensor::vector({0.25, 1.0, 4.0}));
  const double sd[3] = {0.5, 1.0, 2.0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(f.latent.z.at(i, j) == doctest::Approx(f.latent.mu.at(i, j) + sd[j] * oracle::eps(5, 6, 0, i * 3 + j)));
  CHECK_THROWS(m.forward_train(t, x, Tensor::vector({1.0, 0.0, 1.0})));
  CHECK_THROWS_AS(m.forward_train(t, x, Tensor::vector({1.0, 1.0})), ShapeError);
}

TEST_CASE("sampling_sigma broadcasts") {
  CHECK(sampling_sigma(Tensor::scalar(4.0), 2, 3).values()[0] == 2.0);
  const Tensor s = sampling_sigma(Tensor::vector({1, 4, 9}), 2, 3);
  CHECK(s.shape() == Shape{2, 3});
  CHECK(s.at(1, 2) == 3.0);
  CHECK_THROWS(sampling_sigma(Tensor::vector({1, -4, 9}), 2, 3));
}

TEST_CASE("parameters, gradients and clone") {
  LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 1);
  CHECK_THROWS_AS(m.set_parameter(0, Tensor::zeros({2, 2})), ShapeError);
  CHECK_THROWS_AS(m.set_parameter(9, Tensor::zeros({2, 2})), std::out_of_range);
  LatentSplitModel c = m.clone();
  CHECK(c.fingerprint() == m.fingerprint());
  for (const Tensor& p : c.parameters()) CHECK(p.requires_grad());
  c.parameters()[0].mutable_values()[0] += 1.0;
  CHECK(c.fingerprint() != m.fingerprint());

  Tape t;
  t.backward(t.sum(c.forward_logits(t, c.forward_latent(t, Tensor::full({2, 4}, 0.3)))));
  CHECK(c.parameters()[2].has_grad());
  c.zero_grad();
  for (const Tensor& p : c.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("from_layers checks widths") {
  const ModelSpec spec = oracle::tiny_spec();
  const LatentSplitModel m = LatentSplitModel::random(spec, 1);
  CHECK_NOTHROW(LatentSplitModel::from_layers(spec, m.theta_layers(), m.omega_layers()));
  CHECK_THROWS(LatentSplitModel::from_layers(spec, m.omega_layers(), m.theta_layers()));
}
