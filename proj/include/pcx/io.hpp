#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pcx/attribution.hpp"
#include "pcx/metrics.hpp"
#include "pcx/prototype.hpp"
#include "pcx/tensor.hpp"

namespace pcx {

// --- prototype store ---------------------------------------------------------

nlohmann::json prototype_to_json(const PrototypeModel& model);
PrototypeModel prototype_from_json(const nlohmann::json& doc);

struct PrototypeStore {
  std::size_t layer_index = 0;
  std::string method;
  std::vector<PrototypeModel> models;  // ascending class id
  bool partial = false;
  nlohmann::json failures = nlohmann::json::array();
};

std::string prototype_file_name(std::size_t layer_index, const std::string& method, std::size_t class_id);
/// One JSON document per class plus a `store.json` index.
void save_prototype_store(const std::filesystem::path& dir, const PrototypeStore& store);
PrototypeStore load_prototype_store(const std::filesystem::path& dir);

// --- dataset manifest --------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // relative to the manifest
  std::size_t label = 0;
  std::string split;           // train | holdout | ood
  std::optional<std::size_t> strategy;
  std::optional<std::size_t> family;
};

struct DatasetManifest {
  std::size_t class_count = 0;
  std::vector<ManifestEntry> entries;
  std::vector<Tensor> tensors;  // parallel to entries, loaded and checked on read
};

DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes the manifest JSON; tensors are written by the caller.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest filter_split(const DatasetManifest& manifest, const std::string& split);

// --- attribution matrices -----------------------------------------------------

struct AttributionSet {
  Points rows;
  std::size_t layer_index = 0;
  AttributionMethod method = AttributionMethod::lrp_epsilon;
  double epsilon = kDefaultEpsilon;
  bool normalized = true;
  std::string class_conditioning = "predicted";
  std::vector<std::string> sample_ids;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predicted;
  std::vector<std::string> splits;
  std::vector<std::optional<std::size_t>> strategies;
  std::vector<std::optional<std::size_t>> families;
  std::vector<std::string> dropped;

  std::vector<std::size_t> rows_where(const std::string& split, std::optional<std::size_t> label = std::nullopt) const;
};

std::string attribution_stem(std::size_t layer_index);
void save_attribution_set(const std::filesystem::path& dir, const AttributionSet& set);
AttributionSet load_attribution_set(const std::filesystem::path& dir, std::optional<std::size_t> layer_index = std::nullopt);

// --- reports ------------------------------------------------------------------

struct LayerScore {
  std::size_t layer_index = 0;
  double score = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

struct EvalReport {
  std::string metric;
  std::string method;
  std::vector<LayerScore> layers;
  double aggregate = 0.0;
  double std_error = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

/// Aggregate is the mean over layers; its standard error combines the per-layer errors.
EvalReport make_eval_report(std::string metric, std::string method, std::vector<LayerScore> layers,
                            nlohmann::json config);
nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& doc);
/// Methods x metrics grid of aggregates (with standard errors) from every eval report in `dir`.
std::string render_eval_table(const std::vector<EvalReport>& reports);

struct OodDataset {
  std::string name;
  double auc = 0.0;
  std::size_t in_count = 0;
  std::size_t out_count = 0;
};

struct OodReport {
  std::string scorer;
  std::vector<OodDataset> datasets;
  nlohmann::json config = nlohmann::json::object();
};

nlohmann::json to_json(const OodReport& report);
OodReport ood_report_from_json(const nlohmann::json& doc);
/// Scorers x datasets grid of AUCs.
std::string render_ood_table(const std::vector<OodReport>& reports);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace pcx
