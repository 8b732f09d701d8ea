#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "vbkt/model.hpp"
#include "vbkt/prior.hpp"

namespace vbkt {

// JSON text document:
//   {"format": "vbkt-checkpoint", "version": 1,
//    "spec": {input_dim, theta_hidden, latent_dim, omega_hidden, num_classes},
//    "tensors": [{"name", "shape", "values": ["<decimal>", ...]}, ...],
//    "priors": [{"class", "count", "mu": [...], "sigma2": [...]}]   (optional)}
// Values are shortest round-trip decimal strings, so a reload is value-exact.

struct Checkpoint {
  std::optional<LatentSplitModel> model;
  std::optional<ClassPrior> prior;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline void save_model(const LatentSplitModel& model, const std::filesystem::path& path) {
  save_checkpoint({model, std::nullopt}, path);
}
LatentSplitModel load_model(const std::filesystem::path& path);

}  // namespace vbkt
