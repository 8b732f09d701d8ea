#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/checkpoint.hpp"
#include "vbkt/io.hpp"

using namespace vbkt;

TEST_CASE("shortest decimal round trip") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = d(rng) / 3.0;
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(parse_double(format_double(std::numeric_limits<double>::denorm_min())) == std::numeric_limits<double>::denorm_min());
  CHECK_THROWS(parse_double("1.5x"));
  CHECK_THROWS(parse_size("-3"));
  CHECK(split("a,,b", ',').size() == 3);
}

TEST_CASE("model checkpoints reload value-exactly") {
  const auto dir = oracle::scratch_dir("ckpt");
  ModelSpec spec = oracle::tiny_spec();
  spec.omega_hidden = {6};
  const LatentSplitModel m = LatentSplitModel::random(spec, 9);
  save_model(m, dir / "m.txt");
  const LatentSplitModel back = load_model(dir / "m.txt");
  CHECK(back.spec() == spec);
  CHECK(back.fingerprint() == m.fingerprint());
  for (const Tensor& p : back.parameters()) CHECK(p.requires_grad());
  save_model(back, dir / "m2.txt");
  CHECK(read_file(dir / "m.txt") == read_file(dir / "m2.txt"));
}

TEST_CASE("priors ride along") {
  const ClassPrior p({ClassGaussian{{0.1, 0.2}, {1.0 / 3, 2.0}, 5}, ClassGaussian{{-1, 1e-300}, {1e-6, 7}, 9}});
  const Checkpoint back = checkpoint_from_string(checkpoint_to_string({std::nullopt, p}));
  CHECK_FALSE(back.model);
  REQUIRE(back.prior);
  CHECK(back.prior->at(0).sigma2[0] == 1.0 / 3);
  CHECK(back.prior->at(1).mu[1] == 1e-300);
  CHECK(back.prior->at(1).count == 9);
}

TEST_CASE("malformed checkpoints") {
  CHECK_THROWS(checkpoint_from_string("{"));
  CHECK_THROWS(checkpoint_from_string(R"({"format":"other","version":1})"));
  const LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 1);
  std::string text = checkpoint_to_string({m, std::nullopt});
  text.replace(text.find("theta.0.bias"), 12, "theta.0.bogus");
  CHECK_THROWS(checkpoint_from_string(text));
  CHECK_THROWS(load_model("/nonexistent/ckpt.txt"));
  CHECK_THROWS(load_model(oracle::scratch_dir("ckpt_prior_only") / "none.txt"));
}
