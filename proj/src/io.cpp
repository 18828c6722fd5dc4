#include "pcx/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "pcx/error.hpp"

namespace pcx {

using nlohmann::json;

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

// --- prototype store ---------------------------------------------------------

json prototype_to_json(const PrototypeModel& model) {
  json comps = json::array();
  for (const auto& c : model.components) {
    const auto& cov = c.covariance();
    json rows = json::array();
    for (Eigen::Index r = 0; r < cov.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(cov.cols()));
      for (Eigen::Index k = 0; k < cov.cols(); ++k) row[static_cast<std::size_t>(k)] = cov(r, k);
      rows.push_back(row);
    }
    comps.push_back({{"weight", c.weight()}, {"mean", c.mean()}, {"covariance", rows}});
  }
  return {{"format", "pcx-prototypes"},
          {"version", 1},
          {"class_id", model.class_id},
          {"layer_index", model.layer_index},
          {"method", model.method},
          {"components", comps},
          {"closest_training_index", model.closest_training_index},
          {"seed", model.fit.seed},
          {"reg", model.fit.reg},
          {"iterations", model.fit.iterations},
          {"converged", model.fit.converged},
          {"diagonal_covariance", model.fit.diagonal},
          {"degenerate", model.fit.degenerate},
          {"log_likelihood_history", model.fit.log_likelihood_history},
          {"training_log_likelihoods", model.training_log_likelihoods}};
}

PrototypeModel prototype_from_json(const json& doc) {
  try {
    PrototypeModel model;
    model.class_id = doc.at("class_id").get<std::size_t>();
    model.layer_index = doc.at("layer_index").get<std::size_t>();
    model.method = doc.at("method").get<std::string>();
    for (const auto& jc : doc.at("components")) {
      auto mean = jc.at("mean").get<Vector>();
      const auto rows = jc.at("covariance").get<std::vector<Vector>>();
      const auto m = static_cast<Eigen::Index>(mean.size());
      if (static_cast<Eigen::Index>(rows.size()) != m) throw InputError("covariance has wrong row count");
      Eigen::MatrixXd cov(m, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != m)
          throw InputError("covariance has wrong column count");
        for (Eigen::Index k = 0; k < m; ++k) cov(r, k) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
      }
      model.components.emplace_back(jc.at("weight").get<double>(), std::move(mean), std::move(cov));
    }
    if (model.components.empty()) throw InputError("prototype document has no components");
    model.closest_training_index = doc.value("closest_training_index", std::vector<std::size_t>{});
    model.fit.seed = doc.value("seed", std::uint64_t{0});
    model.fit.reg = doc.value("reg", 1e-6);
    model.fit.iterations = doc.value("iterations", std::size_t{0});
    model.fit.converged = doc.value("converged", false);
    model.fit.diagonal = doc.value("diagonal_covariance", false);
    model.fit.degenerate = doc.value("degenerate", false);
    model.fit.log_likelihood_history = doc.value("log_likelihood_history", std::vector<double>{});
    model.training_log_likelihoods = doc.value("training_log_likelihoods", std::vector<double>{});
    return model;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed prototype document: ") + e.what());
  }
}

std::string prototype_file_name(std::size_t layer_index, const std::string& method, std::size_t class_id) {
  return "proto_l" + std::to_string(layer_index) + "_" + method + "_c" + std::to_string(class_id) + ".json";
}

void save_prototype_store(const std::filesystem::path& dir, const PrototypeStore& store) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (const auto& model : store.models) {
    auto name = prototype_file_name(store.layer_index, store.method, model.class_id);
    write_json(dir / name, prototype_to_json(model));
    files.push_back({{"class_id", model.class_id}, {"file", name}});
  }
  write_json(dir / "store.json", {{"format", "pcx-store"},
                                  {"version", 1},
                                  {"layer_index", store.layer_index},
                                  {"method", store.method},
                                  {"partial", store.partial},
                                  {"failures", store.failures},
                                  {"classes", files}});
}

PrototypeStore load_prototype_store(const std::filesystem::path& dir) {
  const auto index = read_json(dir / "store.json");
  PrototypeStore store;
  try {
    store.layer_index = index.at("layer_index").get<std::size_t>();
    store.method = index.at("method").get<std::string>();
    store.partial = index.value("partial", false);
    store.failures = index.value("failures", json::array());
    for (const auto& entry : index.at("classes")) {
      const auto file = dir / entry.at("file").get<std::string>();
      try {
        store.models.push_back(prototype_from_json(read_json(file)));
      } catch (const InputError& e) {
        throw InputError(file.string() + ": " + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw InputError((dir / "store.json").string() + ": " + e.what());
  }
  std::sort(store.models.begin(), store.models.end(),
            [](const PrototypeModel& a, const PrototypeModel& b) { return a.class_id < b.class_id; });
  return store;
}

// --- dataset manifest --------------------------------------------------------

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto doc = read_json(path);
  DatasetManifest manifest;
  try {
    manifest.class_count = doc.at("class_count").get<std::size_t>();
    for (const auto& js : doc.at("samples")) {
      ManifestEntry e;
      e.id = js.at("id").get<std::string>();
      e.path = js.at("path").get<std::string>();
      e.label = js.at("label").get<std::size_t>();
      e.split = js.value("split", std::string("train"));
      if (js.contains("strategy")) e.strategy = js["strategy"].get<std::size_t>();
      if (js.contains("family")) e.family = js["family"].get<std::size_t>();
      if (e.label >= manifest.class_count)
        throw InputError(path.string() + ": sample " + e.id + " has label " + std::to_string(e.label) +
                         " outside class_count " + std::to_string(manifest.class_count));
      if (e.split != "train" && e.split != "holdout" && e.split != "ood")
        throw InputError(path.string() + ": sample " + e.id + " has unknown split '" + e.split + "'");
      manifest.tensors.push_back(read_tensor(path.parent_path() / e.path));
      manifest.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return manifest;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  json samples = json::array();
  for (const auto& e : manifest.entries) {
    json js{{"id", e.id}, {"path", e.path.generic_string()}, {"label", e.label}, {"split", e.split}};
    if (e.strategy) js["strategy"] = *e.strategy;
    if (e.family) js["family"] = *e.family;
    samples.push_back(std::move(js));
  }
  write_json(path, {{"format", "pcx-manifest"},
                    {"version", 1},
                    {"class_count", manifest.class_count},
                    {"samples", samples}});
}

DatasetManifest filter_split(const DatasetManifest& manifest, const std::string& split) {
  if (split.empty() || split == "all") return manifest;
  DatasetManifest out;
  out.class_count = manifest.class_count;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (manifest.entries[i].split == split) {
      out.entries.push_back(manifest.entries[i]);
      out.tensors.push_back(manifest.tensors[i]);
    }
  return out;
}

// --- attribution matrices -----------------------------------------------------

std::vector<std::size_t> AttributionSet::rows_where(const std::string& split, std::optional<std::size_t> label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if ((split.empty() || splits[i] == split) && (!label || labels[i] == *label)) out.push_back(i);
  return out;
}

std::string attribution_stem(std::size_t layer_index) { return "layer_" + std::to_string(layer_index); }

void save_attribution_set(const std::filesystem::path& dir, const AttributionSet& set) {
  std::filesystem::create_directories(dir);
  const auto stem = attribution_stem(set.layer_index);
  if (set.rows.empty()) throw InputError("no attribution rows to write for layer " + std::to_string(set.layer_index));
  write_tensor(dir / (stem + ".pcxt"), tensor_from_points(set.rows));
  json strategies = json::array(), families = json::array();
  for (const auto& s : set.strategies) strategies.push_back(s ? json(*s) : json(nullptr));
  for (const auto& f : set.families) families.push_back(f ? json(*f) : json(nullptr));
  write_json(dir / (stem + ".json"), {{"format", "pcx-attributions"},
                                      {"version", 1},
                                      {"matrix", stem + ".pcxt"},
                                      {"method", to_string(set.method)},
                                      {"flavor", to_string(flavor_of(set.method))},
                                      {"layer_index", set.layer_index},
                                      {"epsilon", set.epsilon},
                                      {"normalized", set.normalized},
                                      {"class_conditioning", set.class_conditioning},
                                      {"sample_ids", set.sample_ids},
                                      {"labels", set.labels},
                                      {"predicted", set.predicted},
                                      {"splits", set.splits},
                                      {"strategies", strategies},
                                      {"families", families},
                                      {"dropped", set.dropped}});
}

AttributionSet load_attribution_set(const std::filesystem::path& dir, std::optional<std::size_t> layer_index) {
  std::filesystem::path sidecar;
  if (layer_index) {
    sidecar = dir / (attribution_stem(*layer_index) + ".json");
  } else {
    std::vector<std::filesystem::path> found;
    if (std::filesystem::is_directory(dir))
      for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".json" && entry.path().stem().string().rfind("layer_", 0) == 0)
          found.push_back(entry.path());
    if (found.size() != 1)
      throw InputError(dir.string() + ": expected exactly one attribution layer, found " + std::to_string(found.size()) +
                       " (pass a layer index)");
    sidecar = found.front();
  }
  const auto doc = read_json(sidecar);
  AttributionSet set;
  try {
    set.layer_index = doc.at("layer_index").get<std::size_t>();
    set.method = parse_method(doc.at("method").get<std::string>());
    set.epsilon = doc.value("epsilon", kDefaultEpsilon);
    set.normalized = doc.value("normalized", true);
    set.class_conditioning = doc.value("class_conditioning", std::string("predicted"));
    set.sample_ids = doc.at("sample_ids").get<std::vector<std::string>>();
    set.labels = doc.at("labels").get<std::vector<std::size_t>>();
    set.predicted = doc.value("predicted", std::vector<std::size_t>{});
    set.splits = doc.at("splits").get<std::vector<std::string>>();
    for (const auto& s : doc.value("strategies", json::array()))
      set.strategies.push_back(s.is_null() ? std::nullopt : std::optional<std::size_t>(s.get<std::size_t>()));
    for (const auto& f : doc.value("families", json::array()))
      set.families.push_back(f.is_null() ? std::nullopt : std::optional<std::size_t>(f.get<std::size_t>()));
    set.dropped = doc.value("dropped", std::vector<std::string>{});
    set.rows = points_from_tensor(read_tensor(sidecar.parent_path() / doc.at("matrix").get<std::string>()));
  } catch (const json::exception& e) {
    throw InputError(sidecar.string() + ": " + e.what());
  }
  const std::size_t n = set.rows.size();
  set.strategies.resize(n);
  set.families.resize(n);
  if (set.sample_ids.size() != n || set.labels.size() != n || set.splits.size() != n)
    throw InputError(sidecar.string() + ": sidecar lists do not match the " + std::to_string(n) + " matrix rows");
  return set;
}

// --- reports ------------------------------------------------------------------

EvalReport make_eval_report(std::string metric, std::string method, std::vector<LayerScore> layers, json config) {
  EvalReport r{std::move(metric), std::move(method), std::move(layers), 0.0, 0.0, std::move(config)};
  if (r.layers.empty()) return r;
  double var = 0.0;
  for (const auto& l : r.layers) {
    r.aggregate += l.score;
    var += l.std_error * l.std_error;
  }
  const double n = static_cast<double>(r.layers.size());
  r.aggregate /= n;
  r.std_error = std::sqrt(var) / n;
  return r;
}

json to_json(const EvalReport& report) {
  json layers = json::array();
  for (const auto& l : report.layers)
    layers.push_back(
        {{"layer_index", l.layer_index}, {"score", l.score}, {"std_error", l.std_error}, {"samples", l.samples}});
  return {{"format", "pcx-eval"},  {"version", 1},         {"metric", report.metric},
          {"method", report.method}, {"layers", layers},   {"aggregate", report.aggregate},
          {"std_error", report.std_error}, {"config", report.config}};
}

EvalReport eval_report_from_json(const json& doc) {
  try {
    EvalReport r;
    r.metric = doc.at("metric").get<std::string>();
    r.method = doc.at("method").get<std::string>();
    for (const auto& jl : doc.at("layers"))
      r.layers.push_back({jl.at("layer_index").get<std::size_t>(), jl.at("score").get<double>(),
                          jl.at("std_error").get<double>(), jl.at("samples").get<std::size_t>()});
    r.aggregate = doc.at("aggregate").get<double>();
    r.std_error = doc.at("std_error").get<double>();
    r.config = doc.value("config", json::object());
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed eval report: ") + e.what());
  }
}

namespace {

std::string format_cell(double value, double se) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f +- %.4f", value, se);
  return buf;
}

std::string render_grid(const std::string& corner, const std::vector<std::string>& rows,
                        const std::vector<std::string>& cols, const std::map<std::pair<std::string, std::string>, std::string>& cells) {
  std::vector<std::size_t> width(cols.size() + 1, corner.size());
  for (const auto& r : rows) width[0] = std::max(width[0], r.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    width[c + 1] = cols[c].size();
    for (const auto& r : rows) {
      auto it = cells.find({r, cols[c]});
      width[c + 1] = std::max(width[c + 1], it == cells.end() ? std::size_t{1} : it->second.size());
    }
  }
  std::ostringstream os;
  auto pad = [&](const std::string& s, std::size_t w) { os << s << std::string(w - s.size() + 2, ' '); };
  pad(corner, width[0]);
  for (std::size_t c = 0; c < cols.size(); ++c) pad(cols[c], width[c + 1]);
  os << '\n';
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  os << std::string(total, '-') << '\n';
  for (const auto& r : rows) {
    pad(r, width[0]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto it = cells.find({r, cols[c]});
      pad(it == cells.end() ? "-" : it->second, width[c + 1]);
    }
    os << '\n';
  }
  return os.str();
}

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

std::string render_eval_table(const std::vector<EvalReport>& reports) {
  static const std::vector<std::string> canonical{"faithfulness", "faithfulness@0.1", "stability", "sparseness",
                                                  "coverage", "outlier"};
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, std::string> cells;
  for (const auto& c : canonical)
    for (const auto& r : reports)
      if (r.metric == c) push_unique(cols, c);
  for (const auto& r : reports) push_unique(cols, r.metric);
  for (const auto& r : reports) {
    const std::string row = r.config.value("row", r.method);
    push_unique(rows, row);
    cells[{row, r.metric}] = format_cell(r.aggregate, r.std_error);
  }
  auto rank = [](const std::string& row) {
    static const std::vector<std::string> regimes{"kmeans-euclid", "gmm-euclid", "gmm-loglik"};
    auto it = std::find(regimes.begin(), regimes.end(), row);
    return it == regimes.end() ? 0 : 1 + (it - regimes.begin());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const std::string& a, const std::string& b) { return rank(a) < rank(b); });
  return render_grid("method", rows, cols, cells);
}

json to_json(const OodReport& report) {
  json datasets = json::array();
  for (const auto& d : report.datasets)
    datasets.push_back({{"name", d.name}, {"auc", d.auc}, {"in_count", d.in_count}, {"out_count", d.out_count}});
  return {{"format", "pcx-ood"},
          {"version", 1},
          {"scorer", report.scorer},
          {"orientation", "higher score = more in-distribution"},
          {"datasets", datasets},
          {"config", report.config}};
}

OodReport ood_report_from_json(const json& doc) {
  try {
    OodReport r;
    r.scorer = doc.at("scorer").get<std::string>();
    for (const auto& d : doc.at("datasets"))
      r.datasets.push_back({d.at("name").get<std::string>(), d.at("auc").get<double>(),
                            d.at("in_count").get<std::size_t>(), d.at("out_count").get<std::size_t>()});
    r.config = doc.value("config", json::object());
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed OOD report: ") + e.what());
  }
}

std::string render_ood_table(const std::vector<OodReport>& reports) {
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, std::string> cells;
  for (const auto& r : reports) {
    push_unique(rows, r.scorer);
    for (const auto& d : r.datasets) {
      push_unique(cols, d.name);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", d.auc);
      cells[{r.scorer, d.name}] = buf;
    }
  }
  return render_grid("scorer (AUC)", rows, cols, cells);
}

}  // namespace pcx
