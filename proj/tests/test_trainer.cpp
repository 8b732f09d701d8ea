#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/metrics.hpp"
#include "vbkt/prior.hpp"
#include "vbkt/trainer.hpp"

using namespace vbkt;

namespace {

struct Bench {
  ClusterLayout layout = make_layout(10, 20, 7);
  DomainDataset source = sample_domain(layout, 2000, 7, "source");
  DomainDataset source_test = sample_domain(layout, 1000, 8, "source_test");
  ShiftSpec shift = ShiftSpec::random_affine(20, 1.2, 1.0, 11);
  DomainDataset target = derive_target(source, layout, shift, 200, true, 12, "target");
  DomainDataset target_test = derive_target(source, layout, shift, 1000, false, 13, "tt", {1.0});
  LatentSplitModel source_model = train_source(ModelSpec{}, source, SgdConfig{10, 64, 0.05, 3});
  ClassPrior prior = fit_class_priors(source_model, source);
};

const Bench& bench() {
  static const Bench b;
  return b;
}

TrainConfig quick(Method m, std::uint64_t seed = 1) {
  TrainConfig c;
  c.method = m;
  c.seed = seed;
  c.epochs = 5;
  return c;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::no_transfer, Method::one_hot, Method::tsl, Method::vbkt_gmf, Method::vbkt_eb}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS(method_from_string("fine_tune"));
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 0);
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 50);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
}

TEST_CASE("run_sgd step count and batches") {
  LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 1).clone();
  std::vector<std::size_t> sizes;
  std::size_t observed = 0;
  const StepObjective obj = [&](Tape& t, const LatentSplitModel& model, std::span<const std::size_t> batch) {
    sizes.push_back(batch.size());
    const Tensor x = Tensor::full({batch.size(), 4}, 0.5);
    const Tensor ce = cross_entropy(t, model.forward_logits(t, model.forward_latent(t, x)),
                                    std::vector<std::size_t>(batch.size(), 1));
    return compose_loss(t, ObjectiveParts{ce, std::nullopt, std::nullopt, std::nullopt}, {});
  };
  const TrainReport r = run_sgd(m, 10, SgdConfig{3, 4, 0.01, 2}, obj, [&](std::size_t, const LossBreakdown&) { ++observed; });
  CHECK(r.steps == 9);
  CHECK(observed == 9);
  CHECK(r.epochs.size() == 3);
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2, 4, 4, 2, 4, 4, 2});
  CHECK_THROWS(run_sgd(m, 0, SgdConfig{}, obj));
  CHECK_THROWS(SgdConfig{1, 0, 0.1, 1}.validate());
  CHECK_THROWS(SgdConfig{1, 4, -0.1, 1}.validate());
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.method = Method::one_hot;
  c.use_relational = true;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.method = Method::tsl;
  c.combine_tsl = true;
  CHECK_THROWS(c.validate());
  c.method = Method::vbkt_gmf;
  c.use_relational = true;
  CHECK_NOTHROW(c.validate());
  CHECK(c.weights().relational == 0.1);
  CHECK(c.weights().tsl == 1.0);
  CHECK(c.weights().kl == 1.0);
}

TEST_CASE("prerequisites are checked before any step") {
  const Bench& b = bench();
  std::size_t steps = 0;
  const StepObserver count = [&](std::size_t, const LossBreakdown&) { ++steps; };
  const DomainDataset unpaired = derive_target(b.source, b.layout, b.shift, 100, false, 3);
  CHECK_THROWS(train(b.source_model, unpaired, {&b.source_model, &b.source, nullptr}, quick(Method::vbkt_gmf), nullptr, count));
  CHECK_THROWS(train(b.source_model, b.target, {&b.source_model, nullptr, nullptr}, quick(Method::vbkt_gmf), nullptr, count));
  CHECK_THROWS(train(b.source_model, b.target, {&b.source_model, &b.source, nullptr}, quick(Method::vbkt_eb), nullptr, count));
  CHECK_THROWS(train(b.source_model, b.target, {}, quick(Method::tsl), nullptr, count));
  CHECK(steps == 0);
}

TEST_CASE("learning rate zero leaves weights untouched") {
  const Bench& b = bench();
  TrainConfig c = quick(Method::vbkt_eb);
  c.learning_rate = 0.0;
  const TrainResult r = train(b.source_model.clone(), b.target, {&b.source_model, &b.source, &b.prior}, c);
  CHECK(r.model.fingerprint() == b.source_model.fingerprint());
}

TEST_CASE("training is bitwise reproducible and never touches the source") {
  const Bench& b = bench();
  const std::uint64_t before = b.source_model.fingerprint();
  for (Method m : {Method::no_transfer, Method::one_hot, Method::tsl, Method::vbkt_gmf, Method::vbkt_eb}) {
    TrainConfig c = quick(m, 4);
    c.use_relational = m == Method::vbkt_gmf || m == Method::vbkt_eb;
    const TransferSources src{&b.source_model, &b.source, &b.prior};
    const TrainResult r1 = train(initial_model(m, b.source_model, 4), b.target, src, c, &b.target_test);
    const TrainResult r2 = train(initial_model(m, b.source_model, 4), b.target, src, c, &b.target_test);
    CHECK(r1.model.fingerprint() == r2.model.fingerprint());
    CHECK(r1.report.to_json().dump() == r2.report.to_json().dump());
    CHECK_FALSE(r1.report.to_json().contains("wall_clock_seconds"));
    CHECK(r1.report.to_json(true).contains("wall_clock_seconds"));
    REQUIRE(r1.report.accuracy);
    CHECK(*r1.report.accuracy >= 0.0);
    CHECK(*r1.report.accuracy <= 1.0);
    for (const auto& e : r1.report.epochs) CHECK(std::isfinite(e.total));
    CHECK(b.source_model.fingerprint() == before);
  }
  CHECK(initial_model(Method::no_transfer, b.source_model, 1).fingerprint() != before);
  CHECK(initial_model(Method::one_hot, b.source_model, 1).fingerprint() == before);
}

TEST_CASE("vbkt_gmf reduces its objective") {
  const Bench& b = bench();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c = quick(Method::vbkt_gmf, seed);
    c.epochs = 20;
    const TrainResult r = train(b.source_model, b.target, {&b.source_model, &b.source, nullptr}, c);
    CHECK(r.report.epochs.back().total < r.report.epochs.front().total);
  }
}

TEST_CASE("one-hot fine-tuning on source data keeps source accuracy") {
  const Bench& b = bench();
  std::vector<std::size_t> pick(400);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  const DomainDataset subset{b.source.rows(pick), b.source.labels_at(pick), 10, "source_subset", std::nullopt};
  const double before = accuracy(b.source_model, b.source_test);
  TrainConfig c = quick(Method::one_hot);
  c.epochs = 100;
  const TrainResult r = train(b.source_model, subset, {}, c);
  CHECK(accuracy(r.model, b.source_test) >= before - 0.02);
}

TEST_CASE("sigma estimation") {
  const Bench& b = bench();
  CHECK_THROWS(estimate_sigma(b.source_model, b.target, 1, 0.5, 1));
  const auto zero = estimate_sigma(b.source_model, b.target, 4, 0.0, 1);
  REQUIRE(zero.size() == 1);
  CHECK(zero[0] == 1e-6);
  CHECK(estimate_sigma(b.source_model, b.target, 4, 0.5, 1, SigmaMode::vector).size() == 32);

  // identity theta: latent jitter equals input jitter
  ModelSpec spec;
  spec.input_dim = 5;
  spec.theta_hidden = {};
  spec.latent_dim = 5;
  spec.num_classes = 2;
  std::vector<double> eye(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye[i * 6] = 1.0;
  const LatentSplitModel ref = LatentSplitModel::random(spec, 1);
  const LatentSplitModel lin = LatentSplitModel::from_layers(
      spec, {AffineLayer{Tensor({5, 5}, eye), Tensor::zeros({5})}}, ref.omega_layers());
  std::mt19937_64 rng(4);
  const DomainDataset d{oracle::uniform_tensor(rng, {20, 5}, -1, 1), std::vector<std::size_t>(20, 0), 2, "d", std::nullopt};
  const double s1 = std::sqrt(estimate_sigma(lin, d, 1000, 0.3, 2)[0]);
  const double s2 = std::sqrt(estimate_sigma(lin, d, 1000, 0.6, 2)[0]);
  CHECK(std::abs(s1 - 0.3) < 0.03);
  CHECK(std::abs(s2 / s1 - 2.0) < 0.2);
}
