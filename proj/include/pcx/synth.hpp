#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pcx/network.hpp"
#include "pcx/points.hpp"

namespace pcx {

/// Gaussian sub-strategy data in a latent concept space of dimension m.
/// The trailing `distractor_dims` concepts are shared by all classes and carry
/// no class signal; the remaining concepts are split into one contiguous block
/// per class, and strategy s of class c raises concept s of block c.
struct SynthConfig {
  std::size_t families = 1;
  std::size_t classes_per_family = 2;
  std::size_t strategies = 2;
  std::size_t dimension = 16;
  std::size_t distractor_dims = 0;
  double separation = 8.0;   // distance between strategy means, in sigma
  double anisotropy = 1.0;   // variance ratio along each strategy's own concept
  double sigma = 1.0;
  double distractor_scale = 1.0;  // distractor standard deviation, in sigma
  std::size_t train = 100;        // per strategy
  std::size_t holdout = 50;       // per strategy
  std::size_t ood = 20;           // in total
  std::uint64_t seed = 0;

  std::size_t class_count() const { return families * classes_per_family; }
  std::size_t block_size() const;
  /// Throws InputError on an unusable configuration.
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& doc);

struct SynthSample {
  std::string id;
  Vector latent;  // concept-layer activation
  std::size_t label = 0;
  std::size_t family = 0;
  std::optional<std::size_t> strategy;  // unset for ood samples
  std::string split;
};

struct SynthData {
  SynthConfig config;
  std::vector<SynthSample> samples;  // train, then holdout, then ood
  Points strategy_means;             // class-major: index c * strategies + s
  Vector base;                       // shared offset that keeps the latent positive
};

SynthData synth_generate(const SynthConfig& config);

/// Latent points grouped by class * strategies + strategy for one split.
std::vector<Points> synth_points_by_strategy(const SynthData& data, const std::string& split);

/// dense(Q) -> relu -> dense(W): input x = Q^T h reproduces h at layer 1, and
/// W sums the block of each class. Concept layer index is 1.
NetworkSpec synth_network(const SynthConfig& config);
/// Network input for a latent vector.
Tensor synth_input(const NetworkSpec& net, const Vector& latent);

/// Writes manifest.json, net.json with weights, samples/<id>.pcxt and ground_truth.json.
void write_synth(const std::filesystem::path& dir, const SynthData& data);

}  // namespace pcx
