#include "vbkt/checkpoint.hpp"

#include <stdexcept>

#include "json.hpp"
#include "vbkt/io.hpp"

namespace vbkt {

namespace {

using nlohmann::json;

json encode_values(std::span<const double> values) {
  json arr = json::array();
  for (double v : values) arr.push_back(format_double(v));
  return arr;
}

std::vector<double> decode_values(const json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(parse_double(v.get<std::string>()));
  return out;
}

json encode_spec(const ModelSpec& s) {
  return {{"input_dim", s.input_dim},
          {"theta_hidden", s.theta_hidden},
          {"latent_dim", s.latent_dim},
          {"omega_hidden", s.omega_hidden},
          {"num_classes", s.num_classes}};
}

ModelSpec decode_spec(const json& j) {
  ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.theta_hidden = j.at("theta_hidden").get<std::vector<std::size_t>>();
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.omega_hidden = j.at("omega_hidden").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  return s;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  json doc;
  doc["format"] = "vbkt-checkpoint";
  doc["version"] = 1;
  if (ckpt.model) {
    doc["spec"] = encode_spec(ckpt.model->spec());
    json tensors = json::array();
    const auto params = ckpt.model->parameters();
    const auto names = ckpt.model->parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back({{"name", names[i]}, {"shape", params[i].shape()}, {"values", encode_values(params[i].values())}});
    }
    doc["tensors"] = std::move(tensors);
  }
  if (ckpt.prior) {
    json priors = json::array();
    for (std::size_t c = 0; c < ckpt.prior->num_classes(); ++c) {
      const ClassGaussian& g = ckpt.prior->at(c);
      priors.push_back({{"class", c}, {"count", g.count}, {"mu", encode_values(g.mu)}, {"sigma2", encode_values(g.sigma2)}});
    }
    doc["priors"] = std::move(priors);
  }
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  Checkpoint out;
  try {
    const json doc = json::parse(text);
    if (doc.at("format") != "vbkt-checkpoint" || doc.at("version") != 1) {
      throw std::runtime_error("not a version-1 vbkt checkpoint");
    }
    if (doc.contains("spec")) {
      const ModelSpec spec = decode_spec(doc.at("spec"));
      LatentSplitModel model = LatentSplitModel::zeros(spec);
      const auto names = model.parameter_names();
      const json& tensors = doc.at("tensors");
      if (tensors.size() != names.size()) throw std::runtime_error("checkpoint tensor count does not match spec");
      for (std::size_t i = 0; i < names.size(); ++i) {
        const json& t = tensors[i];
        if (t.at("name") != names[i]) throw std::runtime_error("unexpected tensor '" + t.at("name").get<std::string>() + "'");
        model.set_parameter(i, Tensor(t.at("shape").get<Shape>(), decode_values(t.at("values")), true));
      }
      out.model = std::move(model);
    }
    if (doc.contains("priors")) {
      std::vector<ClassGaussian> classes;
      for (const json& p : doc.at("priors")) {
        if (p.at("class").get<std::size_t>() != classes.size()) throw std::runtime_error("priors out of order");
        classes.push_back({decode_values(p.at("mu")), decode_values(p.at("sigma2")), p.at("count").get<std::size_t>()});
      }
      out.prior = ClassPrior(std::move(classes));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_string(read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

LatentSplitModel load_model(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path);
  if (!c.model) throw std::runtime_error(path.string() + ": checkpoint holds no model");
  return std::move(*c.model);
}

}  // namespace vbkt
