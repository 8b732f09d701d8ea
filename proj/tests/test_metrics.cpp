#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/io.hpp"
#include "vbkt/metrics.hpp"

using namespace vbkt;

namespace {

DomainDataset labelled_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % 3;
  return {oracle::uniform_tensor(rng, {n, 4}, -2, 2), labels, 3, "d", std::nullopt};
}

}  // namespace

TEST_CASE("argmax ties go to the lowest index") {
  const Tensor t = Tensor::matrix(2, 3, {1, 3, 3, -1, -1, -2});
  CHECK(argmax_row(t, 0) == 1);
  CHECK(argmax_row(t, 1) == 0);
}

TEST_CASE("accuracy against an oracle") {
  const LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 5);
  const DomainDataset d = labelled_rows(90, 2);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    oracle::Vec x(4);
    for (std::size_t j = 0; j < 4; ++j) x[j] = d.x.at(i, j);
    const auto y = oracle::logits(m, oracle::latent(m, x));
    const std::size_t pred = std::max_element(y.begin(), y.end()) - y.begin();
    hits += pred == d.labels[i];
  }
  CHECK(accuracy(m, d) == doctest::Approx(hits / 90.0));
}

TEST_CASE("intra-class discrepancy") {
  const LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 5);
  const DomainDataset d = labelled_rows(90, 3);
  const DiscrepancyMatrix a = intra_class_discrepancy(m, d, 1, 10, 4);
  const DiscrepancyMatrix b = intra_class_discrepancy(m, d, 1, 10, 4);
  REQUIRE(a.n() == 10);
  CHECK(a.sample_ids == b.sample_ids);
  double sum = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(d.labels[a.sample_ids[i]] == 1);
    CHECK(a.at(i, i) == 0.0);
    for (std::size_t j = 0; j < 10; ++j) {
      CHECK(a.at(i, j) == a.at(j, i));
      if (i != j) sum += a.at(i, j);
    }
  }
  CHECK(a.mean_off_diagonal() == doctest::Approx(sum / 90));
  // one entry against a direct distance
  const Tensor y = m.predict_logits(d.rows(std::vector<std::size_t>{a.sample_ids[2], a.sample_ids[5]}));
  double dist = 0.0;
  for (std::size_t j = 0; j < 3; ++j) dist += (y.at(0, j) - y.at(1, j)) * (y.at(0, j) - y.at(1, j));
  CHECK(a.at(2, 5) == doctest::Approx(std::sqrt(dist)));
  CHECK(a.to_csv().rfind("sample_id,", 0) == 0);
  CHECK(a.to_csv() == b.to_csv());
  CHECK_THROWS(intra_class_discrepancy(m, d, 1, 31, 4));
}

TEST_CASE("embedding export round-trips") {
  const auto dir = oracle::scratch_dir("metrics");
  const LatentSplitModel m = LatentSplitModel::random(oracle::tiny_spec(), 5);
  const DomainDataset d = labelled_rows(12, 3);
  export_embeddings(m, {&d}, dir / "emb.csv");
  const auto rows = load_embeddings(dir / "emb.csv");
  REQUIRE(rows.size() == 12);
  const Tensor z = m.predict_latent(d.x);
  CHECK(rows[4].label == d.labels[4]);
  CHECK(rows[4].domain_id == "d");
  CHECK(rows[4].z[2] == z.at(4, 2));
  CHECK(read_file(dir / "emb.csv").rfind("domain_id,label,z0,z1,z2\n", 0) == 0);
}
