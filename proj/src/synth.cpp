#include "pcx/synth.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <set>

#include "pcx/error.hpp"
#include "pcx/io.hpp"
#include "pcx/random.hpp"

namespace pcx {

using nlohmann::json;

std::size_t SynthConfig::block_size() const {
  const std::size_t k = class_count();
  if (k == 0 || distractor_dims >= dimension) return 0;
  return (dimension - distractor_dims) / k;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InputError("synth config: " + msg); };
  if (families < 1 || classes_per_family < 1 || strategies < 1) fail("families, classes_per_family and strategies must be >= 1");
  if (dimension < 1) fail("dimension must be >= 1");
  if (train < 1 || holdout < 1) fail("train and holdout counts must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) fail("separation must be finite and >= 0");
  if (!(anisotropy > 0.0) || !std::isfinite(anisotropy)) fail("anisotropy must be finite and > 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) fail("sigma must be finite and > 0");
  if (!(distractor_scale >= 0.0) || !std::isfinite(distractor_scale)) fail("distractor_scale must be finite and >= 0");
  if (block_size() < strategies)
    fail("dimension " + std::to_string(dimension) + " leaves " + std::to_string(block_size()) +
         " concepts per class, fewer than " + std::to_string(strategies) + " strategies");
}

json to_json(const SynthConfig& c) {
  return {{"families", c.families},
          {"classes_per_family", c.classes_per_family},
          {"strategies", c.strategies},
          {"dimension", c.dimension},
          {"distractor_dims", c.distractor_dims},
          {"separation", c.separation},
          {"anisotropy", c.anisotropy},
          {"sigma", c.sigma},
          {"distractor_scale", c.distractor_scale},
          {"train", c.train},
          {"holdout", c.holdout},
          {"ood", c.ood},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& doc) {
  if (!doc.is_object()) throw InputError("synth config must be a JSON object");
  const auto known = to_json(SynthConfig{});
  for (const auto& [key, value] : doc.items())
    if (!known.contains(key)) throw InputError("synth config: unknown key '" + key + "'");
  json merged = known;
  merged.update(doc);
  try {
    SynthConfig c;
    c.families = merged["families"].get<std::size_t>();
    c.classes_per_family = merged["classes_per_family"].get<std::size_t>();
    c.strategies = merged["strategies"].get<std::size_t>();
    c.dimension = merged["dimension"].get<std::size_t>();
    c.distractor_dims = merged["distractor_dims"].get<std::size_t>();
    c.separation = merged["separation"].get<double>();
    c.anisotropy = merged["anisotropy"].get<double>();
    c.sigma = merged["sigma"].get<double>();
    c.distractor_scale = merged["distractor_scale"].get<double>();
    c.train = merged["train"].get<std::size_t>();
    c.holdout = merged["holdout"].get<std::size_t>();
    c.ood = merged["ood"].get<std::size_t>();
    c.seed = merged["seed"].get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("synth config: ") + e.what());
  }
}

SynthData synth_generate(const SynthConfig& config) {
  config.validate();
  const std::size_t m = config.dimension, b = config.block_size(), classes = config.class_count();
  const std::size_t signal_end = m - config.distractor_dims;
  const double bump = config.separation * config.sigma / std::sqrt(2.0);
  const double long_sd = config.sigma * std::sqrt(config.anisotropy);
  const double margin = 6.0 * std::max({long_sd, config.sigma, config.distractor_scale * config.sigma});

  SynthData data;
  data.config = config;
  data.base.assign(m, margin);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t s = 0; s < config.strategies; ++s) {
      Vector mu = data.base;
      mu[c * b + s] += bump;
      data.strategy_means.push_back(std::move(mu));
    }

  Rng rng(config.seed);
  std::size_t serial = 0;
  auto make_id = [&](const std::string& split) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%06zu", split.c_str(), serial++);
    return std::string(buf);
  };
  auto draw = [&](const Vector& mean, std::optional<std::size_t> long_axis) {
    Vector h(m);
    for (std::size_t i = 0; i < m; ++i) {
      double sd = i >= signal_end ? config.distractor_scale * config.sigma : config.sigma;
      if (long_axis && i == *long_axis) sd = long_sd;
      h[i] = std::max(0.0, mean[i] + sd * standard_normal(rng));
    }
    return h;
  };

  for (const std::string split : {"train", "holdout"}) {
    const std::size_t count = split == "train" ? config.train : config.holdout;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t s = 0; s < config.strategies; ++s)
        for (std::size_t i = 0; i < count; ++i) {
          SynthSample smp;
          smp.id = make_id(split);
          smp.latent = draw(data.strategy_means[c * config.strategies + s], c * b + s);
          smp.label = c;
          smp.family = c / config.classes_per_family;
          smp.strategy = s;
          smp.split = split;
          data.samples.push_back(std::move(smp));
        }
  }

  // Out-of-distribution samples reach the same class logit through concepts
  // no strategy uses; with every concept taken they spread over the block.
  for (std::size_t i = 0; i < config.ood; ++i) {
    const std::size_t c = i % classes;
    Vector mean = data.base;
    if (b > config.strategies) {
      const std::size_t spare = b - config.strategies;
      mean[c * b + config.strategies + (i / classes) % spare] += bump;
    } else {
      for (std::size_t j = 0; j < b; ++j) mean[c * b + j] += bump / static_cast<double>(b);
    }
    SynthSample smp;
    smp.id = make_id("ood");
    smp.latent = draw(mean, std::nullopt);
    smp.label = c;
    smp.family = c / config.classes_per_family;
    smp.split = "ood";
    data.samples.push_back(std::move(smp));
  }
  return data;
}

std::vector<Points> synth_points_by_strategy(const SynthData& data, const std::string& split) {
  std::vector<Points> out(data.config.class_count() * data.config.strategies);
  for (const auto& s : data.samples)
    if (s.split == split && s.strategy) out[s.label * data.config.strategies + *s.strategy].push_back(s.latent);
  return out;
}

namespace {

Eigen::MatrixXd orthogonal_matrix(std::size_t m, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd g(m, m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) g(r, c) = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
  return q;
}

}  // namespace

NetworkSpec synth_network(const SynthConfig& config) {
  config.validate();
  const std::size_t m = config.dimension, b = config.block_size(), classes = config.class_count();
  const Eigen::MatrixXd q = orthogonal_matrix(m, config.seed);
  Tensor wq({m, m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) wq.data()[r * m + c] = static_cast<float>(q(r, c));
  Tensor wo({classes, m});
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t j = 0; j < b; ++j) wo.data()[c * m + c * b + j] = 1.0f;
  return NetworkSpec({m}, classes, {LayerSpec::dense(std::move(wq)), LayerSpec::relu(), LayerSpec::dense(std::move(wo))});
}

Tensor synth_input(const NetworkSpec& net, const Vector& latent) {
  const Tensor& w = *net.layer(0).weights;
  const std::size_t m = latent.size();
  Tensor x({m});
  for (std::size_t c = 0; c < m; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) acc += static_cast<double>(w.data()[r * m + c]) * latent[r];
    x.data()[c] = static_cast<float>(acc);
  }
  return x;
}

void write_synth(const std::filesystem::path& dir, const SynthData& data) {
  const NetworkSpec net = synth_network(data.config);
  std::filesystem::create_directories(dir / "samples");
  save_network(dir / "net.json", net);

  DatasetManifest manifest;
  manifest.class_count = data.config.class_count();
  for (const auto& s : data.samples) {
    ManifestEntry e;
    e.id = s.id;
    e.path = std::filesystem::path("samples") / (s.id + ".pcxt");
    e.label = s.label;
    e.split = s.split;
    e.strategy = s.strategy;
    e.family = s.family;
    write_tensor(dir / e.path, synth_input(net, s.latent));
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(dir / "manifest.json", manifest);

  json truth{{"format", "pcx-synth-truth"},
             {"version", 1},
             {"config", to_json(data.config)},
             {"concept_layer", 1},
             {"block_size", data.config.block_size()},
             {"base", data.base},
             {"strategy_means", data.strategy_means}};
  json latents = json::object();
  for (const auto& s : data.samples) latents[s.id] = s.latent;
  truth["latents"] = latents;
  write_json(dir / "ground_truth.json", truth);
}

}  // namespace pcx
