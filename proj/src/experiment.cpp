#include "vbkt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "vbkt/checkpoint.hpp"
#include "vbkt/io.hpp"
#include "vbkt/metrics.hpp"
#include "vbkt/prior.hpp"

namespace vbkt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

void read_training(const json& j, TrainConfig& t, bool& sigma_fixed, const std::string& where) {
  check_keys(j, where, {"epochs", "batch_size", "learning_rate", "gmf", "eb", "relation", "tsl"});
  read(j, "epochs", t.epochs, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rate", t.learning_rate, where);
  if (j.contains("gmf")) {
    const json& g = j.at("gmf");
    check_keys(g, where + ".gmf", {"sigma2", "kl_weight"});
    if (g.contains("sigma2") && !g.at("sigma2").is_null()) {
      const json& s = g.at("sigma2");
      if (s.is_number()) {
        t.gmf.sigma2 = {s.get<double>()};
      } else {
        read(g, "sigma2", t.gmf.sigma2, where + ".gmf");
      }
      sigma_fixed = true;
    }
    read(g, "kl_weight", t.gmf.kl_weight, where + ".gmf");
  }
  if (j.contains("eb")) {
    const json& e = j.at("eb");
    check_keys(e, where + ".eb", {"kl_weight", "prior_variance_scale", "sample_variance_scale"});
    read(e, "kl_weight", t.eb.kl_weight, where + ".eb");
    read(e, "prior_variance_scale", t.eb.prior_variance_scale, where + ".eb");
    read(e, "sample_variance_scale", t.eb.sample_variance_scale, where + ".eb");
  }
  if (j.contains("relation")) {
    const json& r = j.at("relation");
    check_keys(r, where + ".relation", {"beta", "group_size"});
    read(r, "beta", t.relation.beta, where + ".relation");
    read(r, "group_size", t.relation.group_size, where + ".relation");
  }
  if (j.contains("tsl")) {
    const json& s = j.at("tsl");
    check_keys(s, where + ".tsl", {"temperature", "weight"});
    read(s, "temperature", t.tsl.temperature, where + ".tsl");
    read(s, "weight", t.tsl.weight, where + ".tsl");
  }
}

json training_json(const TrainConfig& t, bool sigma_fixed) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"gmf", {{"sigma2", sigma_fixed ? json(t.gmf.sigma2) : json(nullptr)}, {"kl_weight", t.gmf.kl_weight}}},
          {"eb",
           {{"kl_weight", t.eb.kl_weight},
            {"prior_variance_scale", t.eb.prior_variance_scale},
            {"sample_variance_scale", t.eb.sample_variance_scale}}},
          {"relation", {{"beta", t.relation.beta}, {"group_size", t.relation.group_size}}},
          {"tsl", {{"temperature", t.tsl.temperature}, {"weight", t.tsl.weight}}}};
}

std::string_view to_string(SigmaMode m) { return m == SigmaMode::scalar ? "scalar" : "vector"; }

SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "scalar") return SigmaMode::scalar;
  if (s == "vector") return SigmaMode::vector;
  throw ConfigError("sigma.mode: expected 'scalar' or 'vector', got '" + s + "'");
}

void say(std::ostream* log, const std::string& line) {
  static std::mutex mu;
  if (log == nullptr) return;
  std::lock_guard<std::mutex> lock(mu);
  *log << line << '\n';
  log->flush();
}

std::string pct(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

bool uses(const ExperimentConfig& cfg, Method m) {
  for (const auto& name : cfg.methods) {
    if (parse_method_variant(name).method == m) return true;
  }
  return false;
}

BenchmarkData ensure_data(const ExperimentConfig& cfg, const RunLayout& layout, std::ostream* log) {
  if (fs::exists(layout.source_data()) && fs::exists(layout.target_train()) && fs::exists(layout.target_test())) {
    return {load_dataset(layout.source_data()), load_dataset(layout.target_train()), load_dataset(layout.target_test())};
  }
  cmd_generate(cfg, log);
  return {load_dataset(layout.source_data()), load_dataset(layout.target_train()), load_dataset(layout.target_test())};
}

LatentSplitModel ensure_source(const ExperimentConfig& cfg, const RunLayout& layout, const BenchmarkData& data,
                               std::ostream* log) {
  if (fs::exists(layout.source_checkpoint())) return load_model(layout.source_checkpoint());
  say(log, "training source model");
  LatentSplitModel model = train_source(cfg.model, data.source, cfg.source_training);
  fs::create_directories(layout.source_checkpoint().parent_path());
  save_model(model, layout.source_checkpoint());
  say(log, "wrote " + layout.source_checkpoint().string());
  return model;
}

ClassPrior ensure_prior(const ExperimentConfig& cfg, const RunLayout& layout, const LatentSplitModel& source,
                        const DomainDataset& source_data, std::ostream* log) {
  if (fs::exists(layout.prior())) {
    Checkpoint c = load_checkpoint(layout.prior());
    if (!c.prior) throw std::runtime_error(layout.prior().string() + ": holds no prior");
    return std::move(*c.prior);
  }
  ClassPrior prior = fit_class_priors(source, source_data, cfg.prior_variance_floor);
  save_checkpoint({std::nullopt, prior}, layout.prior());
  say(log, "wrote " + layout.prior().string());
  return prior;
}

std::vector<double> ensure_sigma(const ExperimentConfig& cfg, const RunLayout& layout, const LatentSplitModel& source,
                                 const DomainDataset& target_train, std::ostream* log) {
  if (fs::exists(layout.sigma())) {
    try {
      const json j = json::parse(read_file(layout.sigma()));
      std::vector<double> out;
      for (const auto& v : j.at("sigma2")) out.push_back(parse_double(v.get<std::string>()));
      return out;
    } catch (const json::exception& e) {
      throw std::runtime_error(layout.sigma().string() + ": " + e.what());
    }
  }
  const SigmaConfig& s = cfg.sigma;
  const std::vector<double> sigma2 =
      estimate_sigma(source, target_train, s.n_aug, s.strength, s.seed, s.mode, s.variance_floor);
  json j;
  j["mode"] = to_string(s.mode);
  j["n_aug"] = s.n_aug;
  j["strength"] = s.strength;
  j["seed"] = s.seed;
  json vals = json::array();
  for (double v : sigma2) vals.push_back(format_double(v));
  j["sigma2"] = std::move(vals);
  write_file_atomic(layout.sigma(), j.dump(1) + "\n");
  say(log, "wrote " + layout.sigma().string());
  return sigma2;
}

std::optional<double> finished_accuracy(const fs::path& cell) {
  if (!fs::exists(cell / "report.json") || !fs::exists(cell / "checkpoint.txt")) return std::nullopt;
  try {
    const json j = json::parse(read_file(cell / "report.json"));
    if (!j.at("accuracy").is_number()) return std::nullopt;
    return j.at("accuracy").get<double>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

ShiftSpec BenchmarkConfig::shift() const {
  if (shift_kind == ShiftKind::affine_channel) {
    return ShiftSpec::random_affine(input_dim, shift_strength, shift_bias, shift_seed);
  }
  return ShiftSpec::colored_noise(input_dim, noise_levels, noise_colour, shift_seed);
}

ClusterLayout BenchmarkConfig::layout() const {
  return make_layout(num_classes, input_dim, data_seed, SourceOptions{separation, spread});
}

std::string MethodVariant::name() const {
  std::string s(to_string(method));
  if (relational) s += "_rela";
  if (tsl) s += "_tsl";
  return s;
}

MethodVariant parse_method_variant(const std::string& name) {
  MethodVariant v;
  std::string base = name;
  auto strip = [&](const std::string& suffix) {
    if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
      base.resize(base.size() - suffix.size());
      return true;
    }
    return false;
  };
  v.tsl = strip("_tsl");
  v.relational = strip("_rela");
  try {
    v.method = method_from_string(base);
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown method '" + name + "'");
  }
  if (v.tsl && v.method == Method::tsl) throw ConfigError("unknown method '" + name + "'");
  return v;
}

TrainConfig ExperimentConfig::cell_config(const std::string& method_name, std::uint64_t seed) const {
  const MethodVariant v = parse_method_variant(method_name);
  TrainConfig t = training;
  if (auto it = method_overrides.find(method_name); it != method_overrides.end()) {
    bool fixed = false;
    read_training(it->second, t, fixed, "method_overrides." + method_name);
  }
  t.method = v.method;
  t.use_relational = v.relational;
  t.combine_tsl = v.tsl;
  t.seed = seed;
  return t;
}

void ExperimentConfig::validate() const {
  const BenchmarkConfig& b = benchmark;
  if (b.num_classes < 2) throw ConfigError("benchmark.num_classes must be at least 2");
  if (b.input_dim == 0) throw ConfigError("benchmark.input_dim must be positive");
  if (b.n_source == 0 || b.n_target == 0 || b.n_target_test == 0 || b.n_source_test == 0) {
    throw ConfigError("benchmark sizes must be positive");
  }
  if (b.n_target * 10 > b.n_source) throw ConfigError("benchmark.n_target may be at most n_source / 10");
  if (b.n_target < 2 * b.num_classes) throw ConfigError("benchmark.n_target must give every class two samples");
  if (!(b.separation >= 0.0) || !(b.spread > 0.0)) throw ConfigError("benchmark separation/spread out of range");
  if (b.shift_kind == ShiftKind::affine_channel && !(b.shift_strength >= 0.0 && b.shift_bias >= 0.0)) {
    throw ConfigError("benchmark.shift strength and bias must be nonnegative");
  }
  if (b.shift_kind == ShiftKind::additive_noise) {
    if (b.noise_levels.empty()) throw ConfigError("benchmark.shift.noise_levels is empty");
    for (double v : b.noise_levels)
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("benchmark.shift.noise_levels must be positive");
    if (!(b.noise_colour >= 0.0)) throw ConfigError("benchmark.shift.colour must be nonnegative");
  }
  if (model.input_dim != b.input_dim || model.num_classes != b.num_classes) {
    throw ConfigError("model dimensions do not match the benchmark");
  }
  try {
    model.validate();
    source_training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (sigma.n_aug < 2 || !(sigma.strength > 0.0) || !(sigma.variance_floor > 0.0)) {
    throw ConfigError("sigma: n_aug >= 2, strength > 0 and variance_floor > 0 required");
  }
  if (!(prior_variance_floor > 0.0)) throw ConfigError("prior.variance_floor must be positive");
  if (analysis.samples_per_class < 2) throw ConfigError("analysis.samples_per_class must be at least 2");
  if (methods.empty()) throw ConfigError("methods is empty");
  if (seeds.empty()) throw ConfigError("seeds is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds contain duplicates");
  }
  if (std::set<std::string>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ConfigError("methods contain duplicates");
  }
  for (const auto& [name, _] : method_overrides) {
    if (std::find(methods.begin(), methods.end(), name) == methods.end()) {
      throw ConfigError("method_overrides names '" + name + "', which is not in methods");
    }
  }
  for (const auto& name : methods) {
    const TrainConfig t = cell_config(name, seeds.front());
    try {
      t.validate();
      t.gmf.validate(model.latent_dim);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name + ": " + e.what());
    }
    if (t.method == Method::vbkt_gmf && !b.parallel) {
      throw ConfigError(name + ": vbkt_gmf needs a parallel benchmark");
    }
  }
}

json ExperimentConfig::identity_json() const {
  json j = config_to_json(*this);
  j.erase("methods");
  j.erase("seeds");
  j.erase("output_dir");
  j.erase("analysis");
  return j;
}

std::string ExperimentConfig::hash() const {
  const std::string text = identity_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig default_parallel_config() { return ExperimentConfig{}; }

ExperimentConfig default_nonparallel_config() {
  ExperimentConfig cfg;
  cfg.benchmark.parallel = false;
  cfg.benchmark.shift_kind = ShiftKind::additive_noise;
  cfg.methods = {"no_transfer", "one_hot", "tsl", "vbkt_eb", "vbkt_eb_rela"};
  return cfg;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  check_keys(j, "config",
             {"benchmark", "model", "source_training", "sigma", "prior", "training", "method_overrides", "methods",
              "seeds", "output_dir", "analysis"});
  if (j.contains("benchmark")) {
    const json& b = j.at("benchmark");
    BenchmarkConfig& o = cfg.benchmark;
    check_keys(b, "benchmark",
               {"num_classes", "input_dim", "n_source", "n_target", "n_target_test", "n_source_test", "separation",
                "spread", "data_seed", "parallel", "shift"});
    read(b, "num_classes", o.num_classes, "benchmark");
    read(b, "input_dim", o.input_dim, "benchmark");
    read(b, "n_source", o.n_source, "benchmark");
    read(b, "n_target", o.n_target, "benchmark");
    read(b, "n_target_test", o.n_target_test, "benchmark");
    read(b, "n_source_test", o.n_source_test, "benchmark");
    read(b, "separation", o.separation, "benchmark");
    read(b, "spread", o.spread, "benchmark");
    read(b, "data_seed", o.data_seed, "benchmark");
    read(b, "parallel", o.parallel, "benchmark");
    if (b.contains("shift")) {
      const json& s = b.at("shift");
      check_keys(s, "benchmark.shift", {"kind", "strength", "bias", "noise_levels", "colour", "seed"});
      if (s.contains("kind")) {
        std::string kind;
        read(s, "kind", kind, "benchmark.shift");
        try {
          o.shift_kind = shift_kind_from_string(kind);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("benchmark.shift.kind: ") + e.what());
        }
      }
      read(s, "strength", o.shift_strength, "benchmark.shift");
      read(s, "bias", o.shift_bias, "benchmark.shift");
      read(s, "noise_levels", o.noise_levels, "benchmark.shift");
      read(s, "colour", o.noise_colour, "benchmark.shift");
      read(s, "seed", o.shift_seed, "benchmark.shift");
    }
  }
  cfg.model.input_dim = cfg.benchmark.input_dim;
  cfg.model.num_classes = cfg.benchmark.num_classes;
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"theta_hidden", "latent_dim", "omega_hidden"});
    read(m, "theta_hidden", cfg.model.theta_hidden, "model");
    read(m, "latent_dim", cfg.model.latent_dim, "model");
    read(m, "omega_hidden", cfg.model.omega_hidden, "model");
  }
  if (j.contains("source_training")) {
    const json& s = j.at("source_training");
    check_keys(s, "source_training", {"epochs", "batch_size", "learning_rate", "seed"});
    read(s, "epochs", cfg.source_training.epochs, "source_training");
    read(s, "batch_size", cfg.source_training.batch_size, "source_training");
    read(s, "learning_rate", cfg.source_training.learning_rate, "source_training");
    read(s, "seed", cfg.source_training.seed, "source_training");
  }
  if (j.contains("sigma")) {
    const json& s = j.at("sigma");
    check_keys(s, "sigma", {"n_aug", "strength", "seed", "mode", "variance_floor"});
    read(s, "n_aug", cfg.sigma.n_aug, "sigma");
    read(s, "strength", cfg.sigma.strength, "sigma");
    read(s, "seed", cfg.sigma.seed, "sigma");
    read(s, "variance_floor", cfg.sigma.variance_floor, "sigma");
    if (s.contains("mode")) {
      std::string mode;
      read(s, "mode", mode, "sigma");
      cfg.sigma.mode = sigma_mode_from_string(mode);
    }
  }
  if (j.contains("prior")) {
    check_keys(j.at("prior"), "prior", {"variance_floor"});
    read(j.at("prior"), "variance_floor", cfg.prior_variance_floor, "prior");
  }
  if (j.contains("training")) read_training(j.at("training"), cfg.training, cfg.gmf_sigma2_fixed, "training");
  if (j.contains("method_overrides")) {
    const json& o = j.at("method_overrides");
    if (!o.is_object()) throw ConfigError("method_overrides: expected an object");
    for (const auto& [name, value] : o.items()) {
      TrainConfig scratch;
      bool fixed = false;
      read_training(value, scratch, fixed, "method_overrides." + name);
      if (fixed) throw ConfigError("method_overrides." + name + ": gmf.sigma2 is set under training only");
      cfg.method_overrides[name] = value;
    }
  }
  read(j, "methods", cfg.methods, "config");
  read(j, "seeds", cfg.seeds, "config");
  if (j.contains("output_dir")) {
    std::string dir;
    read(j, "output_dir", dir, "config");
    cfg.output_dir = dir;
  }
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    check_keys(a, "analysis", {"samples_per_class", "seed"});
    read(a, "samples_per_class", cfg.analysis.samples_per_class, "analysis");
    read(a, "seed", cfg.analysis.seed, "analysis");
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const BenchmarkConfig& b = cfg.benchmark;
  json overrides = json::object();
  for (const auto& [name, value] : cfg.method_overrides) overrides[name] = value;
  return {{"benchmark",
           {{"num_classes", b.num_classes},
            {"input_dim", b.input_dim},
            {"n_source", b.n_source},
            {"n_target", b.n_target},
            {"n_target_test", b.n_target_test},
            {"n_source_test", b.n_source_test},
            {"separation", b.separation},
            {"spread", b.spread},
            {"data_seed", b.data_seed},
            {"parallel", b.parallel},
            {"shift",
             {{"kind", to_string(b.shift_kind)},
              {"strength", b.shift_strength},
              {"bias", b.shift_bias},
              {"noise_levels", b.noise_levels},
              {"colour", b.noise_colour},
              {"seed", b.shift_seed}}}}},
          {"model",
           {{"theta_hidden", cfg.model.theta_hidden},
            {"latent_dim", cfg.model.latent_dim},
            {"omega_hidden", cfg.model.omega_hidden}}},
          {"source_training",
           {{"epochs", cfg.source_training.epochs},
            {"batch_size", cfg.source_training.batch_size},
            {"learning_rate", cfg.source_training.learning_rate},
            {"seed", cfg.source_training.seed}}},
          {"sigma",
           {{"n_aug", cfg.sigma.n_aug},
            {"strength", cfg.sigma.strength},
            {"seed", cfg.sigma.seed},
            {"mode", to_string(cfg.sigma.mode)},
            {"variance_floor", cfg.sigma.variance_floor}}},
          {"prior", {{"variance_floor", cfg.prior_variance_floor}}},
          {"training", training_json(cfg.training, cfg.gmf_sigma2_fixed)},
          {"method_overrides", std::move(overrides)},
          {"methods", cfg.methods},
          {"seeds", cfg.seeds},
          {"output_dir", cfg.output_dir.string()},
          {"analysis", {{"samples_per_class", cfg.analysis.samples_per_class}, {"seed", cfg.analysis.seed}}}};
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

BenchmarkData generate_benchmark(const BenchmarkConfig& b) {
  const ClusterLayout layout = b.layout();
  const ShiftSpec shift = b.shift();
  DomainDataset source = sample_domain(layout, b.n_source, b.data_seed, "source");
  DomainDataset target_train = derive_target(source, layout, shift, b.n_target, b.parallel, b.data_seed + 5, "target");
  DomainDataset target_test =
      derive_target(source, layout, shift, b.n_target_test, false, b.data_seed + 6, "target_test", DeriveOptions{1.0});
  return {std::move(source), std::move(target_train), std::move(target_test)};
}

DomainDataset source_test_split(const BenchmarkConfig& b) {
  return sample_domain(b.layout(), b.n_source_test, b.data_seed + 1, "source_test");
}

RunLayout run_layout(const ExperimentConfig& cfg) { return {cfg.output_dir / cfg.hash()}; }

std::vector<fs::path> cmd_generate(const ExperimentConfig& cfg, std::ostream* log) {
  const RunLayout layout = run_layout(cfg);
  const BenchmarkData data = generate_benchmark(cfg.benchmark);
  fs::create_directories(layout.data_dir());
  save_dataset(data.source, layout.source_data());
  save_dataset(data.target_train, layout.target_train());
  save_dataset(data.target_test, layout.target_test());
  std::vector<fs::path> out{layout.source_data(), layout.target_train(), layout.target_test()};
  for (const auto& p : out) say(log, p.string());
  write_file_atomic(layout.root / "config.json", config_to_json(cfg).dump(1) + "\n");
  return out;
}

fs::path cmd_fit_prior(const ExperimentConfig& cfg, std::ostream* log) {
  const RunLayout layout = run_layout(cfg);
  const BenchmarkData data = ensure_data(cfg, layout, log);
  const LatentSplitModel source = ensure_source(cfg, layout, data, log);
  fs::remove(layout.prior());
  ensure_prior(cfg, layout, source, data.source, log);
  return layout.prior();
}

fs::path cmd_estimate_sigma(const ExperimentConfig& cfg, std::ostream* log) {
  const RunLayout layout = run_layout(cfg);
  const BenchmarkData data = ensure_data(cfg, layout, log);
  const LatentSplitModel source = ensure_source(cfg, layout, data, log);
  fs::remove(layout.sigma());
  ensure_sigma(cfg, layout, source, data.target_train, log);
  return layout.sigma();
}

RunSummary cmd_run(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  std::ostream* log = options.log;
  const RunLayout layout = run_layout(cfg);
  const BenchmarkData data = ensure_data(cfg, layout, log);
  const LatentSplitModel source = ensure_source(cfg, layout, data, log);
  std::optional<ClassPrior> prior;
  if (uses(cfg, Method::vbkt_eb)) prior = ensure_prior(cfg, layout, source, data.source, log);
  std::vector<double> sigma2 = cfg.training.gmf.sigma2;
  if (uses(cfg, Method::vbkt_gmf) && !cfg.gmf_sigma2_fixed) {
    sigma2 = ensure_sigma(cfg, layout, source, data.target_train, log);
  }

  struct Cell {
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& m : cfg.methods)
    for (std::uint64_t s : cfg.seeds) cells.push_back({m, s});

  RunSummary summary;
  summary.root = layout.root;
  summary.cells.resize(cells.size());
  std::atomic<std::size_t> next{0}, trained{0}, skipped{0}, failed{0};

  auto work = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& c = cells[i];
      CellResult& r = summary.cells[i];
      r.method = c.method;
      r.seed = c.seed;
      const fs::path dir = layout.cell(c.method, c.seed);
      if (auto acc = finished_accuracy(dir)) {
        r.status = "ok";
        r.accuracy = acc;
        ++skipped;
        say(log, c.method + " seed " + std::to_string(c.seed) + ": done already");
        continue;
      }
      try {
        TrainConfig tc = cfg.cell_config(c.method, c.seed);
        if (tc.method == Method::vbkt_gmf && !cfg.gmf_sigma2_fixed) tc.gmf.sigma2 = sigma2;
        const LatentSplitModel init = initial_model(tc.method, source, c.seed);
        TrainResult res =
            train(init, data.target_train, {&source, &data.source, prior ? &*prior : nullptr}, tc, &data.target_test);
        res.report.method = c.method;
        fs::create_directories(dir);
        save_model(res.model, dir / "checkpoint.txt");
        write_file_atomic(dir / "report.json", res.report.to_json().dump(1) + "\n");
        r.status = "ok";
        r.accuracy = res.report.accuracy;
        ++trained;
        say(log, c.method + " seed " + std::to_string(c.seed) + ": " + pct(100.0 * *r.accuracy) + "%");
      } catch (const std::exception& e) {
        r.status = std::string("failed: ") + e.what();
        ++failed;
        say(log, c.method + " seed " + std::to_string(c.seed) + ": " + r.status);
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  summary.trained = trained;
  summary.skipped = skipped;
  summary.failed = failed;
  write_file_atomic(layout.results(), results_csv(cfg.methods, summary.cells));
  say(log, "wrote " + layout.results().string());
  return summary;
}

std::map<std::string, MethodSummary> summarize(const std::vector<CellResult>& cells) {
  std::map<std::string, std::vector<double>> acc;
  for (const auto& c : cells) {
    acc[c.method];
    if (c.status == "ok" && c.accuracy) acc[c.method].push_back(100.0 * *c.accuracy);
  }
  std::map<std::string, MethodSummary> out;
  for (const auto& [m, v] : acc) {
    MethodSummary s;
    s.n = v.size();
    if (!v.empty()) {
      for (double a : v) s.mean_pct += a;
      s.mean_pct /= static_cast<double>(v.size());
    }
    if (v.size() > 1) {
      double ss = 0.0;
      for (double a : v) ss += (a - s.mean_pct) * (a - s.mean_pct);
      s.std_pct = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out[m] = s;
  }
  return out;
}

std::string results_csv(const std::vector<std::string>& methods, const std::vector<CellResult>& cells) {
  std::ostringstream os;
  os << "row,method,seed,n,status,accuracy_pct,std_pct\n";
  for (const auto& c : cells) {
    std::string status = c.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << "run," << c.method << ',' << c.seed << ",1," << status << ','
       << (c.accuracy ? pct(100.0 * *c.accuracy) : "") << ",\n";
  }
  const auto sums = summarize(cells);
  for (const auto& m : methods) {
    auto it = sums.find(m);
    if (it == sums.end()) continue;
    const MethodSummary& s = it->second;
    os << "summary," << m << ",," << s.n << ',' << (s.n > 0 ? "ok" : "failed") << ','
       << (s.n > 0 ? pct(s.mean_pct) : "") << ',' << (s.n > 1 ? pct(s.std_pct) : "") << '\n';
  }
  return os.str();
}

std::vector<fs::path> cmd_analyze(const fs::path& cell_dir, const AnalysisConfig& analysis,
                                  const std::optional<fs::path>& out_dir) {
  const fs::path ckpt = cell_dir / "checkpoint.txt";
  if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint: " + ckpt.string());
  const fs::path root = fs::weakly_canonical(cell_dir).parent_path().parent_path();
  const fs::path test_path = RunLayout{root}.target_test();
  if (!fs::exists(test_path)) throw std::runtime_error("missing dataset: " + test_path.string());
  const LatentSplitModel model = load_model(ckpt);
  const DomainDataset test = load_dataset(test_path);
  const fs::path out = out_dir.value_or(cell_dir);
  fs::create_directories(out);

  std::vector<fs::path> written;
  for (std::size_t c = 0; c < test.num_classes; ++c) {
    const std::size_t n = std::min(analysis.samples_per_class, test.class_members(c).size());
    const DiscrepancyMatrix d = intra_class_discrepancy(model, test, c, n, analysis.seed);
    const fs::path p = out / ("discrepancy_class_" + std::to_string(c) + ".csv");
    write_file_atomic(p, d.to_csv());
    written.push_back(p);
  }
  const fs::path emb = out / "embeddings.csv";
  export_embeddings(model, {&test}, emb);
  written.push_back(emb);
  return written;
}

}  // namespace vbkt
