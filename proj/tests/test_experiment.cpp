#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vbkt/checkpoint.hpp"
#include "vbkt/experiment.hpp"
#include "vbkt/io.hpp"

using namespace vbkt;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json(const fs::path& out) {
  return {{"benchmark", {{"num_classes", 3}, {"input_dim", 6}, {"n_source", 600}, {"n_target", 60},
                         {"n_target_test", 300}, {"n_source_test", 300}}},
          {"model", {{"theta_hidden", {8}}, {"latent_dim", 4}}},
          {"source_training", {{"epochs", 3}}},
          {"training", {{"epochs", 2}}},
          {"sigma", {{"n_aug", 4}}},
          {"methods", {"one_hot", "vbkt_gmf_rela"}},
          {"seeds", {1, 2}},
          {"output_dir", out.string()},
          {"analysis", {{"samples_per_class", 10}}}};
}

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const ExperimentConfig c = config_from_json(nlohmann::json::object());
  CHECK(c.benchmark.n_source == 5000);
  CHECK(c.benchmark.n_target == 400);
  CHECK(c.training.epochs == 100);
  CHECK(c.training.relation.beta == 0.1);
  CHECK(c.seeds.size() == 5);
  CHECK(c.hash() == default_parallel_config().hash());
  CHECK(config_from_json(config_to_json(default_nonparallel_config())).hash() == default_nonparallel_config().hash());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"training", {{"eb", {{"kl_weight", "x"}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"methods", {"one_hot_rela"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"methods", {"adabn"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"benchmark", {{"n_target", 501}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"benchmark", {{"parallel", false}}}, {"methods", {"vbkt_gmf"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"training", {{"learning_rate", -1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"method_overrides", {{"vbkt_eb", {{"epochs", 3}}}}}}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("hyperparameters are overridable") {
  const ExperimentConfig c = config_from_json(
      {{"training", {{"gmf", {{"sigma2", 0.7}, {"kl_weight", 0.5}}}, {"relation", {{"beta", 0.3}}}, {"tsl", {{"temperature", 2.0}}}}},
       {"methods", {"tsl", "vbkt_gmf"}},
       {"method_overrides", {{"tsl", {{"learning_rate", 0.01}}}}}});
  CHECK(c.gmf_sigma2_fixed);
  CHECK(c.training.gmf.sigma2 == std::vector<double>{0.7});
  CHECK(c.cell_config("tsl", 3).learning_rate == 0.01);
  CHECK(c.cell_config("tsl", 3).seed == 3);
  CHECK(c.cell_config("tsl", 3).tsl.temperature == 2.0);
  CHECK(c.cell_config("vbkt_gmf", 3).learning_rate == 0.002);
  CHECK(c.cell_config("vbkt_gmf", 3).relation.beta == 0.3);
}

TEST_CASE("method variants") {
  const MethodVariant v = parse_method_variant("vbkt_eb_rela_tsl");
  CHECK(v.method == Method::vbkt_eb);
  CHECK(v.relational);
  CHECK(v.tsl);
  CHECK(v.name() == "vbkt_eb_rela_tsl");
  CHECK(parse_method_variant("tsl").method == Method::tsl);
  CHECK_THROWS_AS(parse_method_variant("tsl_tsl"), ConfigError);
}

TEST_CASE("hash ignores seeds, methods and output directory") {
  ExperimentConfig a = default_parallel_config();
  ExperimentConfig b = a;
  b.seeds = {9};
  b.methods = {"one_hot"};
  b.output_dir = "elsewhere";
  CHECK(a.hash() == b.hash());
  b.training.relation.beta = 0.2;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
}

TEST_CASE("results table") {
  const std::vector<CellResult> cells{{"a", 1, "ok", 0.5}, {"a", 2, "ok", 0.7}, {"b", 1, "failed: boom, bang", std::nullopt}};
  const std::string csv = results_csv({"a", "b"}, cells);
  CHECK(csv ==
        "row,method,seed,n,status,accuracy_pct,std_pct\n"
        "run,a,1,1,ok,50.0000,\n"
        "run,a,2,1,ok,70.0000,\n"
        "run,b,1,1,failed: boom; bang,,\n"
        "summary,a,,2,ok,60.0000,14.1421\n"
        "summary,b,,0,failed,,\n");
  const auto s = summarize(cells);
  CHECK(s.at("a").std_pct == doctest::Approx(std::sqrt(200.0)));
}

TEST_CASE("generate, run, resume and analyze") {
  const fs::path dir = oracle::scratch_dir("experiment");
  const ExperimentConfig cfg = config_from_json(tiny_json(dir / "runs"));
  const RunLayout layout = run_layout(cfg);

  const auto files = cmd_generate(cfg);
  REQUIRE(files.size() == 3);
  const std::string first = slurp(files[1]);
  cmd_generate(cfg);
  CHECK(slurp(files[1]) == first);

  const fs::path sigma = cmd_estimate_sigma(cfg);
  CHECK(fs::exists(sigma));
  const fs::path prior = cmd_fit_prior(cfg);
  CHECK(load_checkpoint(prior).prior->num_classes() == 3);

  const RunSummary r1 = cmd_run(cfg, {2, nullptr});
  CHECK(r1.trained == 4);
  CHECK(r1.failed == 0);
  const std::string table = slurp(layout.results());
  CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 4 + 2);
  CHECK(fs::exists(layout.cell("vbkt_gmf_rela", 2) / "report.json"));

  // an interrupted run: one cell lost its report
  fs::remove(layout.cell("one_hot", 2) / "report.json");
  const RunSummary r2 = cmd_run(cfg);
  CHECK(r2.trained == 1);
  CHECK(r2.skipped == 3);
  CHECK(slurp(layout.results()) == table);

  ExperimentConfig single = cfg;
  single.methods = {"one_hot"};
  single.seeds = {1};
  cmd_run(single);
  const std::string one = slurp(layout.results());
  CHECK(std::count(one.begin(), one.end(), '\n') == 3);

  const fs::path cell = layout.cell("one_hot", 1);
  const auto out = cmd_analyze(cell, cfg.analysis);
  REQUIRE(out.size() == 4);
  const std::string m0 = slurp(cell / "discrepancy_class_0.csv");
  cmd_analyze(cell, cfg.analysis);
  CHECK(slurp(cell / "discrepancy_class_0.csv") == m0);
  CHECK(fs::exists(cell / "embeddings.csv"));
  CHECK_THROWS_WITH(cmd_analyze(dir / "runs" / "x" / "y" / "1", cfg.analysis),
                    doctest::Contains("checkpoint.txt"));
}

TEST_CASE("failed cells are recorded and the rest continue") {
  const fs::path dir = oracle::scratch_dir("experiment_fail");
  nlohmann::json j = tiny_json(dir / "runs");
  j["methods"] = {"one_hot", "vbkt_gmf"};
  j["seeds"] = {1};
  j["training"]["learning_rate"] = 1e200;  // overflows on the first step
  j["method_overrides"] = {{"one_hot", {{"learning_rate", 0.002}}}};
  const RunSummary r = cmd_run(config_from_json(j));
  CHECK(r.failed == 1);
  CHECK(r.cells[0].status == "ok");
  CHECK(r.cells[1].status.rfind("failed: ", 0) == 0);
}
