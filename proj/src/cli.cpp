#include "pcx/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "pcx/attribution.hpp"
#include "pcx/error.hpp"
#include "pcx/io.hpp"
#include "pcx/metrics.hpp"
#include "pcx/network.hpp"
#include "pcx/ood.hpp"
#include "pcx/parallel.hpp"
#include "pcx/random.hpp"
#include "pcx/synth.hpp"

namespace pcx {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_exact(double v) { return fmt(v, "%.17g"); }

std::vector<std::pair<std::size_t, double>> top_by_magnitude(const Vector& v, std::size_t n) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < std::min(n, idx.size()); ++i) out.emplace_back(idx[i], v[idx[i]]);
  return out;
}

json pairs_json(const std::vector<std::pair<std::size_t, double>>& pairs) {
  json out = json::array();
  for (const auto& [c, v] : pairs) out.push_back({{"concept", c}, {"value", v}});
  return out;
}

const PrototypeModel& model_for(const std::vector<PrototypeModel>& models, std::size_t class_id) {
  for (const auto& m : models)
    if (m.class_id == class_id) return m;
  throw InputError("prototype store has no model for class " + std::to_string(class_id));
}

}  // namespace

// --- validation report --------------------------------------------------------

ValidationReport validate_vector(const std::vector<PrototypeModel>& models, const Vector& v, std::size_t predicted_class,
                                 std::size_t reference_class, std::size_t top_n, double threshold_percentile,
                                 double similar_band) {
  if (!(threshold_percentile >= 0.0 && threshold_percentile <= 100.0))
    throw InputError("threshold percentile must lie in [0, 100]");
  const PrototypeModel& model = model_for(models, reference_class);
  if (v.size() != model.dimension())
    throw InputError("concept vector has " + std::to_string(v.size()) + " entries, prototypes have " +
                     std::to_string(model.dimension()));
  ValidationReport r;
  r.predicted_class = predicted_class;
  r.reference_class = reference_class;
  r.concepts = v;
  r.log_likelihood = log_likelihood_class(model, v);
  r.threshold_percentile = threshold_percentile;
  if (model.training_log_likelihoods.empty()) throw InputError("prototype model has no training log-likelihoods");
  r.percentile = percentile_rank(model.training_log_likelihoods, r.log_likelihood);
  r.threshold_value = percentile(model.training_log_likelihoods, threshold_percentile);
  r.outlier = r.log_likelihood < r.threshold_value;
  r.assigned = assign_prototype(models, v);
  r.nearest_component = assign_prototype({model}, v).component;
  const auto& comp = model.components[r.nearest_component];
  r.mahalanobis = mahalanobis(comp, v);
  r.euclidean = euclidean(comp, v);
  r.top_sample = top_by_magnitude(v, top_n);
  r.top_prototype = top_by_magnitude(comp.mean(), top_n);
  r.delta = explain_delta(comp, v, similar_band);
  return r;
}

json to_json(const ValidationReport& r) {
  json usage = json::array();
  for (auto u : r.delta.usage) usage.push_back(to_string(u));
  double intra = 0.0;
  for (double x : r.delta.intra) intra += x;
  return {{"format", "pcx-validation"},
          {"version", 1},
          {"sample_id", r.sample_id},
          {"predicted_class", r.predicted_class},
          {"reference_class", r.reference_class},
          {"log_likelihood", r.log_likelihood},
          {"percentile", r.percentile},
          {"threshold_percentile", r.threshold_percentile},
          {"threshold_value", r.threshold_value},
          {"verdict", r.outlier ? "outlier" : "in-distribution"},
          {"assigned", {{"class", r.assigned.class_id}, {"component", r.assigned.component}, {"score", r.assigned.score}}},
          {"nearest_component", r.nearest_component},
          {"mahalanobis", r.mahalanobis},
          {"euclidean", r.euclidean},
          {"concepts", r.concepts},
          {"top_sample", pairs_json(r.top_sample)},
          {"top_prototype", pairs_json(r.top_prototype)},
          {"delta",
           {{"values", r.delta.delta},
            {"usage", usage},
            {"similar_band", r.delta.similar_band},
            {"intra", r.delta.intra},
            {"intra_total", intra},
            {"inter_total", r.delta.total - intra},
            {"total", r.delta.total}}}};
}

std::string render_validation(const ValidationReport& r) {
  std::ostringstream os;
  os << "sample            " << r.sample_id << '\n';
  os << "predicted class   " << r.predicted_class << '\n';
  if (r.reference_class != r.predicted_class) os << "compared against  class " << r.reference_class << '\n';
  os << "log-likelihood    " << fmt(r.log_likelihood, "%.4f") << "  (percentile " << fmt(r.percentile, "%.1f")
     << ")\n";
  os << "verdict           " << (r.outlier ? "outlier" : "in-distribution") << "  (threshold p"
     << fmt(r.threshold_percentile, "%g") << " = " << fmt(r.threshold_value, "%.4f") << ")\n";
  os << "assigned          class " << r.assigned.class_id << " component " << r.assigned.component << '\n';
  os << "nearest prototype component " << r.nearest_component << "  mahalanobis " << fmt(r.mahalanobis, "%.4f")
     << "  euclidean " << fmt(r.euclidean, "%.4f") << "\n\n";
  os << "concept  sample     prototype  delta      usage\n";
  const auto& d = r.delta.delta;
  std::vector<std::size_t> shown;
  for (const auto& [c, v] : r.top_sample) shown.push_back(c);
  for (const auto& [c, v] : r.top_prototype)
    if (std::find(shown.begin(), shown.end(), c) == shown.end()) shown.push_back(c);
  for (std::size_t c : shown) {
    char line[128];
    std::snprintf(line, sizeof line, "%-8zu %+.5f  %+.5f  %+.5f  %s\n", c, r.concepts[c], r.concepts[c] - d[c],
                  d[c], to_string(r.delta.usage[c]));
    os << line;
  }
  os << "\nsquared mahalanobis " << fmt(r.delta.total, "%.4f") << '\n';
  return os.str();
}

namespace {

// --- shared helpers -----------------------------------------------------------

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string config;
};

std::size_t conditioned_class(const AttributionSet& set, std::size_t i) {
  return set.class_conditioning == "label" || set.predicted.empty() ? set.labels[i] : set.predicted[i];
}

std::vector<std::size_t> classes_of(const AttributionSet& set) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < set.rows.size(); ++i) s.insert(conditioned_class(set, i));
  return {s.begin(), s.end()};
}

Points rows_for(const AttributionSet& set, const std::string& split, std::size_t cls) {
  Points out;
  for (std::size_t i = 0; i < set.rows.size(); ++i)
    if (set.splits[i] == split && conditioned_class(set, i) == cls) out.push_back(set.rows[i]);
  return out;
}

std::vector<std::size_t> attribution_layers(const fs::path& dir, const std::vector<std::size_t>& requested) {
  if (!requested.empty()) return requested;
  std::vector<std::size_t> layers;
  if (!fs::is_directory(dir)) throw InputError(dir.string() + ": not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto stem = entry.path().stem().string();
    if (entry.path().extension() == ".json" && stem.rfind("layer_", 0) == 0) {
      try {
        layers.push_back(std::stoul(stem.substr(6)));
      } catch (const std::exception&) {
      }
    }
  }
  if (layers.empty()) throw InputError(dir.string() + ": no attribution layers found");
  std::sort(layers.begin(), layers.end());
  return layers;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

// --- attribute ----------------------------------------------------------------

struct AttributeArgs {
  std::string net, manifest, method = "lrp-eps", conditioning = "predicted", split = "all", out, basis;
  std::vector<std::size_t> layers;
  double epsilon = kDefaultEpsilon;
};

int cmd_attribute(const AttributeArgs& a, const Globals& g, std::ostream& out) {
  const NetworkSpec net = load_network(a.net);
  const DatasetManifest manifest = filter_split(load_manifest(a.manifest), a.split);
  if (manifest.entries.empty()) throw InputError(a.manifest + ": no samples in split '" + a.split + "'");
  const AttributionMethod method = parse_method(a.method);
  if (a.conditioning != "predicted" && a.conditioning != "label")
    throw InputError("class conditioning must be 'predicted' or 'label', got '" + a.conditioning + "'");
  std::optional<ConceptBasis> basis;
  if (!a.basis.empty()) basis = ConceptBasis::matrix(read_tensor(a.basis));
  std::vector<std::size_t> layers = a.layers;
  if (layers.empty()) layers.push_back(net.default_feature_layer());
  for (std::size_t l : layers)
    if (l + 1 >= net.layer_count())
      throw InputError("layer " + std::to_string(l) + " is not a hidden layer of " + a.net);

  const std::size_t n = manifest.entries.size();
  std::vector<std::size_t> predicted(n);
  parallel_for(n, g.threads, [&](std::size_t i) {
    if (manifest.tensors[i].shape() != net.input_shape())
      throw InputError(manifest.entries[i].path.string() + ": tensor shape " + shape_str(manifest.tensors[i].shape()) +
                       " does not match network input " + shape_str(net.input_shape()));
    predicted[i] = predicted_class(forward(net, manifest.tensors[i]).logits());
  });

  for (std::size_t layer : layers) {
    std::vector<std::optional<Vector>> rows(n);
    parallel_for(n, g.threads, [&](std::size_t i) {
      const std::size_t cls = a.conditioning == "label" ? manifest.entries[i].label : predicted[i];
      ConceptVector v = attribute(net, manifest.tensors[i], method, cls, layer, a.epsilon);
      if (basis) v = project_basis(v, *basis);
      try {
        rows[i] = normalize(v).values;
      } catch (const NumericalError&) {
        rows[i].reset();
      }
    });
    AttributionSet set;
    set.layer_index = layer;
    set.method = method;
    set.epsilon = a.epsilon;
    set.class_conditioning = a.conditioning;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = manifest.entries[i];
      if (!rows[i]) {
        set.dropped.push_back(e.id);
        continue;
      }
      set.rows.push_back(std::move(*rows[i]));
      set.sample_ids.push_back(e.id);
      set.labels.push_back(e.label);
      set.predicted.push_back(predicted[i]);
      set.splits.push_back(e.split);
      set.strategies.push_back(e.strategy);
      set.families.push_back(e.family);
    }
    save_attribution_set(a.out, set);
    out << "layer " << layer << ": " << set.rows.size() << " x " << (set.rows.empty() ? 0 : set.rows.front().size())
        << " " << to_string(method) << " attributions";
    if (!set.dropped.empty()) out << " (" << set.dropped.size() << " all-zero samples dropped)";
    out << '\n';
  }
  return 0;
}

// --- fit ----------------------------------------------------------------------

struct FitArgs {
  std::string attributions, split = "train", out;
  std::optional<std::size_t> layer;
  std::size_t k = 8;
  double reg = 1e-6;
};

int cmd_fit(const FitArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const AttributionSet set = load_attribution_set(a.attributions, a.layer);
  if (a.k < 1) throw InputError("k must be >= 1");
  PrototypeStore store;
  store.layer_index = set.layer_index;
  store.method = std::string(to_string(set.method));
  const auto classes = classes_of(set);
  std::vector<std::optional<PrototypeModel>> fitted(classes.size());
  std::vector<std::string> failure(classes.size());
  parallel_for(classes.size(), g.threads, [&](std::size_t ci) {
    const Points pts = rows_for(set, a.split, classes[ci]);
    if (pts.size() < a.k) {
      failure[ci] = "class " + std::to_string(classes[ci]) + " has " + std::to_string(pts.size()) +
                    " samples in split '" + a.split + "', fewer than k = " + std::to_string(a.k);
      return;
    }
    try {
      PrototypeModel m = fit_gmm(pts, {a.k, g.seed, a.reg});
      m.class_id = classes[ci];
      m.layer_index = set.layer_index;
      m.method = store.method;
      fitted[ci] = std::move(m);
    } catch (const NumericalError& e) {
      failure[ci] = "class " + std::to_string(classes[ci]) + ": " + e.what();
    }
  });
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    if (fitted[ci]) {
      store.models.push_back(std::move(*fitted[ci]));
    } else {
      store.partial = true;
      store.failures.push_back({{"class_id", classes[ci]}, {"reason", failure[ci]}});
    }
  }
  save_prototype_store(a.out, store);
  out << "fitted " << store.models.size() << " class models (k = " << a.k << ", layer " << store.layer_index << ", "
      << store.method << ")\n";
  if (store.partial) {
    json diag{{"error", "input"}, {"exit_code", 2}, {"message", "some classes could not be fitted; store is partial"},
              {"failures", store.failures}};
    err << diag.dump() << '\n';
    return 2;
  }
  return 0;
}

// --- validate -----------------------------------------------------------------

struct ValidateArgs {
  std::string net, store, manifest, sample, input, out, csv;
  std::size_t top_n = 5;
  double threshold_percentile = 5.0, similar_band = 0.02, epsilon = kDefaultEpsilon;
  std::optional<std::size_t> against_class;
};

int cmd_validate(const ValidateArgs& a, std::ostream& out) {
  const NetworkSpec net = load_network(a.net);
  const PrototypeStore store = load_prototype_store(a.store);
  if (store.models.empty()) throw InputError(a.store + ": prototype store is empty");
  Tensor input;
  std::string id;
  if (!a.input.empty()) {
    input = read_tensor(a.input);
    id = fs::path(a.input).stem().string();
  } else {
    if (a.manifest.empty() || a.sample.empty()) throw InputError("validate needs --input or --manifest with --sample");
    const DatasetManifest manifest = load_manifest(a.manifest);
    auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                           [&](const ManifestEntry& e) { return e.id == a.sample; });
    if (it == manifest.entries.end()) throw InputError(a.manifest + ": no sample with id '" + a.sample + "'");
    input = manifest.tensors[static_cast<std::size_t>(it - manifest.entries.begin())];
    id = a.sample;
  }
  if (input.shape() != net.input_shape())
    throw InputError("sample shape " + shape_str(input.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  const std::size_t predicted = predicted_class(forward(net, input).logits());
  const std::size_t reference = a.against_class.value_or(predicted);
  model_for(store.models, predicted);
  const auto v =
      normalize(attribute(net, input, parse_method(store.method), predicted, store.layer_index, a.epsilon)).values;
  ValidationReport report =
      validate_vector(store.models, v, predicted, reference, a.top_n, a.threshold_percentile, a.similar_band);
  report.sample_id = id;
  out << render_validation(report);
  if (!a.out.empty()) write_json(a.out, to_json(report));
  if (!a.csv.empty()) {
    std::ostringstream csv;
    csv << "concept,sample,prototype,delta,usage,intra\n";
    const auto& d = report.delta.delta;
    for (std::size_t c = 0; c < v.size(); ++c)
      csv << c << ',' << fmt_exact(v[c]) << ',' << fmt_exact(v[c] - d[c]) << ',' << fmt_exact(d[c]) << ','
          << to_string(report.delta.usage[c]) << ',' << fmt_exact(report.delta.intra[c]) << '\n';
    write_text_atomic(a.csv, csv.str());
  }
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string metric, attributions, store, net, manifest, out, table;
  std::vector<std::size_t> layers;
  std::size_t k = 8, stability_k = 5, folds = 10, clusters = 0, repeats = 10;
  double reg = 1e-6, fraction = 1.0;
};

const std::vector<std::string> kMetrics{"faithfulness", "stability", "sparseness", "coverage", "outlier",
                                        "clustering-compare"};

std::vector<EvalReport> load_eval_reports(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw InputError(dir.string() + ": not a directory");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    const auto doc = read_json(f);
    if (doc.is_object() && doc.value("format", "") == "pcx-eval") reports.push_back(eval_report_from_json(doc));
  }
  if (reports.empty()) throw InputError(dir.string() + ": no eval reports found");
  return reports;
}

std::vector<Points> by_strategy(const AttributionSet& set, const std::string& split, std::size_t cls,
                                std::size_t strategies) {
  std::vector<Points> out(strategies);
  for (std::size_t i = 0; i < set.rows.size(); ++i)
    if (set.splits[i] == split && conditioned_class(set, i) == cls && set.strategies[i])
      out[*set.strategies[i]].push_back(set.rows[i]);
  return out;
}

std::size_t strategy_count(const AttributionSet& set) {
  std::size_t n = 0;
  for (const auto& s : set.strategies)
    if (s) n = std::max(n, *s + 1);
  if (n == 0) throw InputError("attributions carry no strategy labels; coverage needs labelled sub-strategies");
  return n;
}

// Standard error over repeated half-subsamples of the held-out points.
double subsample_error(const std::vector<Points>& test, std::size_t repeats, std::uint64_t seed,
                       const std::function<double(const std::vector<Points>&)>& score) {
  if (repeats < 2) return 0.0;
  Rng rng(seed + 0x51ed270b);
  std::vector<double> values;
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<Points> half(test.size());
    for (std::size_t s = 0; s < test.size(); ++s) {
      std::vector<std::size_t> idx(test[s].size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
      for (std::size_t i = 0; i < std::max<std::size_t>(1, idx.size() / 2) && i < idx.size(); ++i)
        half[s].push_back(test[s][idx[i]]);
    }
    values.push_back(score(half));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size() - 1));
}

Estimate combine(const std::vector<Estimate>& parts) {
  Estimate e;
  if (parts.empty()) return e;
  double var = 0.0;
  for (const auto& p : parts) {
    e.value += p.value;
    var += p.std_error * p.std_error;
    e.count += p.count;
  }
  const double n = static_cast<double>(parts.size());
  e.value /= n;
  e.std_error = std::sqrt(var) / n;
  return e;
}

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  if (!a.table.empty()) {
    const std::string text = render_eval_table(load_eval_reports(a.table));
    write_text_atomic(fs::path(a.table) / "table.txt", text);
    out << text;
    return 0;
  }
  if (std::find(kMetrics.begin(), kMetrics.end(), a.metric) == kMetrics.end()) {
    std::string valid;
    for (const auto& m : kMetrics) valid += (valid.empty() ? "" : ", ") + m;
    throw InputError("unknown metric '" + a.metric + "'; valid metrics: " + valid);
  }
  if (a.out.empty()) throw InputError("eval needs --out");
  if (!(a.fraction > 0.0 && a.fraction <= 1.0)) throw InputError("fraction removed must lie in (0, 1]");

  std::optional<PrototypeStore> store;
  if (!a.store.empty()) store = load_prototype_store(a.store);
  std::vector<std::size_t> layers;
  if (store && a.attributions.empty()) {
    layers.push_back(store->layer_index);
  } else {
    if (a.attributions.empty()) throw InputError("eval needs --attributions");
    layers = attribution_layers(a.attributions, a.layers);
  }
  if (store && (layers.size() != 1 || layers.front() != store->layer_index))
    throw InputError("a prototype store covers only layer " + std::to_string(store->layer_index));

  std::optional<NetworkSpec> net;
  std::optional<DatasetManifest> manifest;
  std::map<std::string, std::size_t> by_id;
  if (a.metric == "faithfulness") {
    if (a.net.empty() || a.manifest.empty()) throw InputError("faithfulness needs --net and --manifest");
    net = load_network(a.net);
    manifest = load_manifest(a.manifest);
    for (std::size_t i = 0; i < manifest->entries.size(); ++i) by_id[manifest->entries[i].id] = i;
  }

  const GmmOptions options{a.k, g.seed, a.reg};
  std::map<std::string, std::vector<LayerScore>> per_metric;
  std::string method = store ? store->method : "";
  json config{{"k", a.k}, {"seed", g.seed}, {"reg", a.reg}};

  for (std::size_t layer : layers) {
    std::optional<AttributionSet> set;
    if (!a.attributions.empty()) {
      set = load_attribution_set(a.attributions, layer);
      method = std::string(to_string(set->method));
    }
    auto class_models = [&]() {
      std::vector<PrototypeModel> models;
      if (store) return store->models;
      const auto classes = classes_of(*set);
      models.resize(classes.size());
      parallel_for(classes.size(), g.threads, [&](std::size_t ci) {
        models[ci] = fit_gmm(rows_for(*set, "train", classes[ci]), options);
        models[ci].class_id = classes[ci];
        models[ci].layer_index = layer;
        models[ci].method = method;
      });
      return models;
    };
    auto add = [&](const std::string& metric, const Estimate& e) {
      per_metric[metric].push_back({layer, e.value, e.std_error, e.count});
    };

    if (a.metric == "sparseness") {
      std::vector<Estimate> parts;
      for (const auto& m : class_models()) parts.push_back(sparseness(m));
      add("sparseness", combine(parts));
    } else if (a.metric == "faithfulness") {
      if (!set) throw InputError("faithfulness needs --attributions for the held-out concept vectors");
      const auto models = class_models();
      std::vector<double> full, tenth;
      for (const auto& m : models) {
        std::vector<FaithfulnessSample> samples;
        for (std::size_t i = 0; i < set->rows.size(); ++i) {
          if (set->splits[i] != "holdout" || conditioned_class(*set, i) != m.class_id) continue;
          auto it = by_id.find(set->sample_ids[i]);
          if (it == by_id.end()) throw InputError(a.manifest + ": no sample with id '" + set->sample_ids[i] + "'");
          samples.push_back({manifest->tensors[it->second], set->rows[i]});
        }
        if (samples.empty()) continue;
        const auto r = faithfulness(*net, samples, m, layer, a.fraction, g.threads);
        full.insert(full.end(), r.per_sample.begin(), r.per_sample.end());
        const auto r10 = faithfulness(*net, samples, m, layer, 0.1, g.threads);
        tenth.insert(tenth.end(), r10.per_sample.begin(), r10.per_sample.end());
      }
      if (full.empty()) throw InputError("faithfulness found no held-out samples");
      add("faithfulness", subset_estimate(full, 8));
      add("faithfulness@0.1", subset_estimate(tenth, 8));
      config["fraction_removed"] = a.fraction;
    } else if (a.metric == "stability") {
      const auto classes = classes_of(*set);
      std::vector<Estimate> parts(classes.size());
      parallel_for(classes.size(), g.threads, [&](std::size_t ci) {
        parts[ci] = stability(rows_for(*set, "train", classes[ci]), a.stability_k, a.folds, g.seed, a.reg);
      });
      add("stability", combine(parts));
      config["prototypes"] = a.stability_k;
      config["folds"] = a.folds;
    } else if (a.metric == "coverage") {
      const std::size_t strategies = strategy_count(*set);
      const auto classes = classes_of(*set);
      std::vector<Estimate> parts(classes.size());
      parallel_for(classes.size(), g.threads, [&](std::size_t ci) {
        const auto train = by_strategy(*set, "train", classes[ci], strategies);
        const auto test = by_strategy(*set, "holdout", classes[ci], strategies);
        const auto models = fit_strategy_prototypes(train, g.seed, a.reg);
        std::size_t count = 0;
        for (const auto& t : test) count += t.size();
        parts[ci] = {coverage_with(models, test),
                     subsample_error(test, a.repeats, g.seed,
                                     [&](const std::vector<Points>& half) { return coverage_with(models, half); }),
                     count};
      });
      add("coverage", combine(parts));
      config["repeats"] = a.repeats;
    } else if (a.metric == "outlier") {
      const auto classes = classes_of(*set);
      std::vector<Points> train, holdout;
      for (std::size_t c : classes) {
        train.push_back(rows_for(*set, "train", c));
        holdout.push_back(rows_for(*set, "holdout", c));
      }
      add("outlier", outlier_detection(train, holdout, options));
    } else {
      const std::size_t strategies = strategy_count(*set);
      const auto classes = classes_of(*set);
      std::map<std::string, std::vector<Estimate>> parts;
      for (std::size_t c : classes) {
        ClusteringData data;
        data.train_by_strategy = by_strategy(*set, "train", c, strategies);
        data.holdout_by_strategy = by_strategy(*set, "holdout", c, strategies);
        for (std::size_t o : classes)
          if (o != c) {
            auto pts = rows_for(*set, "holdout", o);
            data.outliers.insert(data.outliers.end(), pts.begin(), pts.end());
          }
        if (data.outliers.empty()) throw InputError("clustering comparison needs at least two classes");
        const std::size_t k = a.clusters == 0 ? strategies : a.clusters;
        for (const auto& row : compare_clusterings(data, k, g.seed, a.reg)) {
          const std::string regime(to_string(row.regime));
          parts[regime + "|coverage"].push_back({row.coverage, 0.0, 1});
          parts[regime + "|outlier"].push_back({row.outlier_auc, 0.0, 1});
        }
      }
      for (const auto& [key, values] : parts) {
        std::vector<double> v;
        for (const auto& e : values) v.push_back(e.value);
        add(key, mean_estimate(v));
      }
    }
  }

  std::vector<EvalReport> reports;
  for (auto& [key, scores] : per_metric) {
    json cfg = config;
    std::string metric = key;
    if (auto bar = key.find('|'); bar != std::string::npos) {
      cfg["row"] = key.substr(0, bar);
      metric = key.substr(bar + 1);
    }
    reports.push_back(make_eval_report(metric, method, std::move(scores), cfg));
  }
  fs::create_directories(a.out);
  for (const auto& r : reports) {
    std::string name = r.metric + "_" + r.method;
    if (r.config.contains("row")) name += "_" + r.config["row"].get<std::string>();
    std::replace(name.begin(), name.end(), '@', '-');
    write_json(fs::path(a.out) / (name + ".json"), to_json(r));
  }
  out << render_eval_table(reports);
  return 0;
}

// --- ood ----------------------------------------------------------------------

struct OodArgs {
  std::string scorer, net, store, in_manifest, out_manifest, in_split = "holdout", out_split = "ood",
                                                             train_split = "train", name, out, table;
  std::optional<std::size_t> layer;
  double temperature = 1.0, reg = 1e-6, epsilon = kDefaultEpsilon;
};

int cmd_ood(const OodArgs& a, const Globals& g, std::ostream& out) {
  if (!a.table.empty()) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.table))
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<OodReport> reports;
    for (const auto& f : files) {
      const auto doc = read_json(f);
      if (doc.is_object() && doc.value("format", "") == "pcx-ood") reports.push_back(ood_report_from_json(doc));
    }
    if (reports.empty()) throw InputError(a.table + ": no OOD reports found");
    const std::string text = render_ood_table(reports);
    write_text_atomic(fs::path(a.table) / "ood_table.txt", text);
    out << text;
    return 0;
  }
  if (a.out.empty()) throw InputError("ood needs --out");
  const NetworkSpec net = load_network(a.net);
  OodScorer scorer;
  scorer.kind = parse_ood_kind(a.scorer);
  scorer.temperature = a.temperature;
  scorer.epsilon = a.epsilon;
  const DatasetManifest in_all = load_manifest(a.in_manifest);
  const DatasetManifest out_all = a.out_manifest.empty() ? in_all : load_manifest(a.out_manifest);
  const DatasetManifest in_set = filter_split(in_all, a.in_split);
  const DatasetManifest out_set = filter_split(out_all, a.out_split);
  if (in_set.entries.empty()) throw InputError(a.in_manifest + ": no in-distribution samples in split '" + a.in_split + "'");
  if (out_set.entries.empty())
    throw InputError((a.out_manifest.empty() ? a.in_manifest : a.out_manifest) +
                     ": no out-of-distribution samples in split '" + a.out_split + "'");

  if (scorer.kind == OodKind::pcx_gmm || scorer.kind == OodKind::pcx_e) {
    if (a.store.empty()) throw InputError("scorer " + a.scorer + " needs --store");
    PrototypeStore store = load_prototype_store(a.store);
    scorer.layer_index = store.layer_index;
    scorer.method = parse_method(store.method);
    scorer.models = std::move(store.models);
  } else if (scorer.kind == OodKind::mahalanobis_baseline) {
    scorer.layer_index = a.layer.value_or(net.default_feature_layer());
    const DatasetManifest train = filter_split(in_all, a.train_split);
    if (train.entries.empty()) throw InputError(a.in_manifest + ": no samples in split '" + a.train_split + "'");
    std::vector<Points> features(in_all.class_count);
    std::vector<Vector> rows(train.entries.size());
    parallel_for(train.entries.size(), g.threads,
                 [&](std::size_t i) { rows[i] = pooled_features(net, train.tensors[i], scorer.layer_index); });
    for (std::size_t i = 0; i < rows.size(); ++i) features[train.entries[i].label].push_back(std::move(rows[i]));
    features.erase(std::remove_if(features.begin(), features.end(), [](const Points& p) { return p.empty(); }),
                   features.end());
    scorer.tied = fit_tied_gaussian(features, a.reg);
  }

  const OodResult result = run_ood_benchmark(net, scorer, in_set.tensors, out_set.tensors, g.threads);
  OodReport report;
  report.scorer = std::string(to_string(scorer.kind));
  const std::string dataset =
      a.name.empty() ? (a.out_manifest.empty() ? a.out_split : fs::path(a.out_manifest).parent_path().filename().string())
                     : a.name;
  report.datasets.push_back({dataset, result.auc, in_set.entries.size(), out_set.entries.size()});
  report.config = {{"temperature", a.temperature}, {"layer_index", scorer.layer_index}, {"in_split", a.in_split},
                   {"out_split", a.out_split}, {"seed", g.seed}};

  fs::create_directories(a.out);
  const std::string stem = report.scorer + "_" + dataset;
  write_json(fs::path(a.out) / (stem + ".json"), to_json(report));

  std::ostringstream scores;
  scores << "set,id,score\n";
  for (std::size_t i = 0; i < result.in_scores.size(); ++i)
    scores << "in," << csv_escape(in_set.entries[i].id) << ',' << fmt_exact(result.in_scores[i]) << '\n';
  for (std::size_t i = 0; i < result.out_scores.size(); ++i)
    scores << "out," << csv_escape(out_set.entries[i].id) << ',' << fmt_exact(result.out_scores[i]) << '\n';
  write_text_atomic(fs::path(a.out) / (stem + "_scores.csv"), scores.str());

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t in_neg_inf = 0, out_neg_inf = 0;
  for (double s : result.in_scores)
    if (std::isfinite(s)) lo = std::min(lo, s), hi = std::max(hi, s); else ++in_neg_inf;
  for (double s : result.out_scores)
    if (std::isfinite(s)) lo = std::min(lo, s), hi = std::max(hi, s); else ++out_neg_inf;
  constexpr std::size_t bins = 20;
  std::ostringstream hist;
  hist << "bin_low,bin_high,in_count,out_count\n";
  if (in_neg_inf + out_neg_inf > 0) hist << "-inf,-inf," << in_neg_inf << ',' << out_neg_inf << '\n';
  if (lo <= hi) {
    const double width = hi > lo ? (hi - lo) / bins : 1.0;
    std::vector<std::size_t> in_counts(bins), out_counts(bins);
    auto bin_of = [&](double s) { return std::min<std::size_t>(bins - 1, static_cast<std::size_t>((s - lo) / width)); };
    for (double s : result.in_scores)
      if (std::isfinite(s)) ++in_counts[bin_of(s)];
    for (double s : result.out_scores)
      if (std::isfinite(s)) ++out_counts[bin_of(s)];
    for (std::size_t b = 0; b < bins; ++b)
      hist << fmt_exact(lo + width * static_cast<double>(b)) << ',' << fmt_exact(lo + width * static_cast<double>(b + 1))
           << ',' << in_counts[b] << ',' << out_counts[b] << '\n';
  }
  write_text_atomic(fs::path(a.out) / (stem + "_histogram.csv"), hist.str());
  out << report.scorer << " on " << dataset << ": AUC " << fmt(result.auc, "%.4f") << " (" << in_set.entries.size()
      << " in, " << out_set.entries.size() << " out)\n";
  return 0;
}

// --- similarity, relmax, outlier clusters -------------------------------------

int cmd_similarity(const std::string& store_dir, const std::string& out_path, std::size_t component, std::ostream& out) {
  const PrototypeStore store = load_prototype_store(store_dir);
  if (store.models.empty()) throw InputError(store_dir + ": prototype store is empty");
  const auto sim = class_similarity_matrix(store.models, component);
  std::ostringstream csv;
  csv << "class";
  for (const auto& m : store.models) csv << ',' << m.class_id;
  csv << '\n';
  for (std::size_t i = 0; i < sim.size(); ++i) {
    csv << store.models[i].class_id;
    for (double v : sim[i]) csv << ',' << fmt_exact(v);
    csv << '\n';
  }
  if (out_path.empty())
    out << csv.str();
  else
    write_text_atomic(out_path, csv.str());
  return 0;
}

int cmd_relmax(const std::string& dir, std::optional<std::size_t> layer, std::size_t concept_index, std::size_t k,
               const std::string& out_path, std::ostream& out) {
  const AttributionSet set = load_attribution_set(dir, layer);
  if (set.rows.empty() || concept_index >= set.rows.front().size())
    throw InputError("concept " + std::to_string(concept_index) + " is outside the attribution matrix");
  const auto picks = relmax_select(set.rows, concept_index, k);
  json list = json::array();
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const std::size_t i = picks[r];
    list.push_back({{"rank", r}, {"row", i}, {"id", set.sample_ids[i]}, {"value", set.rows[i][concept_index]}});
    out << r << '\t' << set.sample_ids[i] << '\t' << fmt(set.rows[i][concept_index]) << '\n';
  }
  if (!out_path.empty())
    write_json(out_path, {{"format", "pcx-relmax"},
                          {"version", 1},
                          {"layer_index", set.layer_index},
                          {"concept", concept_index},
                          {"samples", list}});
  return 0;
}

int cmd_outlier_clusters(const std::string& dir, const std::string& store_dir, std::size_t cls, double pct,
                         std::size_t k, const std::string& split, const std::string& out_path, const Globals& g,
                         std::ostream& out) {
  const PrototypeStore store = load_prototype_store(store_dir);
  const AttributionSet set = load_attribution_set(dir, store.layer_index);
  const PrototypeModel& model = model_for(store.models, cls);
  Points pts;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < set.rows.size(); ++i)
    if ((split == "all" || set.splits[i] == split) && conditioned_class(set, i) == cls) {
      pts.push_back(set.rows[i]);
      ids.push_back(set.sample_ids[i]);
    }
  if (pts.empty()) throw InputError("no samples of class " + std::to_string(cls) + " in split '" + split + "'");
  const auto r = outlier_clusters(pts, model, pct, k, g.seed);
  auto id_list = [&](const std::vector<std::size_t>& idx) {
    json a = json::array();
    for (auto i : idx) a.push_back(ids[i]);
    return a;
  };
  json clusters = json::array();
  for (const auto& c : r.clusters) clusters.push_back(id_list(c));
  const json doc{{"format", "pcx-outlier-clusters"}, {"version", 1},         {"class_id", cls},
                 {"percentile", pct},                {"threshold", r.threshold}, {"outliers", id_list(r.outliers)},
                 {"clusters", clusters},             {"ungrouped", r.ungrouped}};
  out << r.outliers.size() << " outliers below " << fmt(r.threshold, "%.4f");
  if (r.ungrouped)
    out << " (fewer than " << k << ", not grouped)\n";
  else
    out << " in " << r.clusters.size() << " groups\n";
  if (!out_path.empty()) write_json(out_path, doc);
  return 0;
}

// --- config file expansion ----------------------------------------------------

void append_config_value(std::vector<std::string>& args, const std::string& key, const json& value) {
  std::string flag = "--" + key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  if (value.is_boolean()) {
    args.push_back(flag + "=" + (value.get<bool>() ? "true" : "false"));
  } else if (value.is_array()) {
    for (const auto& v : value) append_config_value(args, key, v);
  } else if (value.is_string()) {
    args.push_back(flag);
    args.push_back(value.get<std::string>());
  } else if (value.is_number()) {
    args.push_back(flag);
    args.push_back(value.dump());
  } else {
    throw InputError("config key '" + key + "' has an unsupported value type");
  }
}

/// Settings from a JSON config file are appended after the command line so that
/// they take precedence. Keys under a subcommand's name apply to that subcommand.
std::vector<std::string> expand_config(std::vector<std::string> args, const std::set<std::string>& subcommands) {
  std::string path, sub;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    if (sub.empty() && subcommands.count(args[i])) sub = args[i];
  }
  if (path.empty()) return args;
  const json doc = read_json(path);
  if (!doc.is_object()) throw InputError(path + ": config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "config") continue;
    if (subcommands.count(key)) {
      if (key != sub) continue;
      if (!value.is_object()) throw InputError(path + ": section '" + key + "' must be an object");
      for (const auto& [k2, v2] : value.items()) append_config_value(args, k2, v2);
    } else {
      append_config_value(args, key, value);
    }
  }
  return args;
}

void report_error(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototypical concept-based explanations: attribute, fit, validate and evaluate.", "pcx"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "JSON file whose settings override command-line flags");

  auto take_all = [](CLI::Option* o) { return o->multi_option_policy(CLI::MultiOptionPolicy::TakeAll); };

  AttributeArgs attr;
  auto* s_attr = app.add_subcommand("attribute", "Compute normalized concept attribution matrices");
  s_attr->add_option("--net", attr.net, "Network JSON")->required();
  s_attr->add_option("--manifest", attr.manifest, "Dataset manifest")->required();
  s_attr->add_option("--method", attr.method, "lrp-eps | lrp-composite | ixg | guided-backprop | activation-max | activation-sum")
      ->capture_default_str();
  take_all(s_attr->add_option("--layer", attr.layers, "Layer index (repeatable; default: feature layer)"));
  s_attr->add_option("--conditioning", attr.conditioning, "predicted | label")->capture_default_str();
  s_attr->add_option("--split", attr.split, "train | holdout | ood | all")->capture_default_str();
  s_attr->add_option("--epsilon", attr.epsilon, "LRP stabilizer")->capture_default_str();
  s_attr->add_option("--basis", attr.basis, "Concept basis matrix (PCXT, n x m, unit-norm columns)");
  s_attr->add_option("--out", attr.out, "Output directory")->required();

  FitArgs fit;
  auto* s_fit = app.add_subcommand("fit", "Fit per-class Gaussian mixture prototypes");
  s_fit->add_option("--attributions", fit.attributions, "Attribution directory")->required();
  s_fit->add_option("--layer", fit.layer, "Layer index (needed when several are present)");
  s_fit->add_option("--k", fit.k, "Prototypes per class")->capture_default_str();
  s_fit->add_option("--reg", fit.reg, "Covariance regularization")->capture_default_str();
  s_fit->add_option("--split", fit.split, "Training split")->capture_default_str();
  s_fit->add_option("--out", fit.out, "Prototype store directory")->required();

  ValidateArgs val;
  auto* s_val = app.add_subcommand("validate", "Check one prediction against the prototypes");
  s_val->add_option("--net", val.net, "Network JSON")->required();
  s_val->add_option("--store", val.store, "Prototype store directory")->required();
  s_val->add_option("--manifest", val.manifest, "Dataset manifest");
  s_val->add_option("--sample", val.sample, "Sample id in the manifest");
  s_val->add_option("--input", val.input, "Sample tensor (PCXT)");
  s_val->add_option("--top-n", val.top_n, "Concepts to list")->capture_default_str();
  s_val->add_option("--threshold-percentile", val.threshold_percentile, "Outlier threshold percentile")
      ->capture_default_str();
  s_val->add_option("--similar-band", val.similar_band, "Band for similar concept usage")->capture_default_str();
  s_val->add_option("--against-class", val.against_class, "Compare with another class's prototypes");
  s_val->add_option("--epsilon", val.epsilon, "LRP stabilizer")->capture_default_str();
  s_val->add_option("--out", val.out, "Report JSON");
  s_val->add_option("--csv", val.csv, "Per-concept CSV");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Evaluate prototypes and attributions");
  s_eval->add_option("--metric", ev.metric,
                     "faithfulness | stability | sparseness | coverage | outlier | clustering-compare");
  s_eval->add_option("--attributions", ev.attributions, "Attribution directory");
  take_all(s_eval->add_option("--layer", ev.layers, "Layer index (repeatable; default: all)"));
  s_eval->add_option("--store", ev.store, "Use a fitted prototype store instead of fitting");
  s_eval->add_option("--net", ev.net, "Network JSON (faithfulness)");
  s_eval->add_option("--manifest", ev.manifest, "Dataset manifest (faithfulness)");
  s_eval->add_option("--k", ev.k, "Prototypes per class")->capture_default_str();
  s_eval->add_option("--stability-k", ev.stability_k, "Prototypes per fold for stability")->capture_default_str();
  s_eval->add_option("--folds", ev.folds, "Folds for stability")->capture_default_str();
  s_eval->add_option("--clusters", ev.clusters, "Clusters for clustering-compare (0: strategy count)")
      ->capture_default_str();
  s_eval->add_option("--repeats", ev.repeats, "Subsample repeats for coverage errors")->capture_default_str();
  s_eval->add_option("--fraction", ev.fraction, "Fraction of concepts removed")->capture_default_str();
  s_eval->add_option("--reg", ev.reg, "Covariance regularization")->capture_default_str();
  s_eval->add_option("--out", ev.out, "Report directory");
  s_eval->add_option("--table", ev.table, "Render the table for a report directory");

  OodArgs od;
  auto* s_ood = app.add_subcommand("ood", "Out-of-distribution benchmark");
  s_ood->add_option("--scorer", od.scorer, "msp | energy | mahalanobis-baseline | pcx-gmm | pcx-e");
  s_ood->add_option("--net", od.net, "Network JSON");
  s_ood->add_option("--store", od.store, "Prototype store (pcx scorers)");
  s_ood->add_option("--in-manifest", od.in_manifest, "In-distribution manifest");
  s_ood->add_option("--out-manifest", od.out_manifest, "Out-of-distribution manifest (default: the in manifest)");
  s_ood->add_option("--in-split", od.in_split, "In-distribution split")->capture_default_str();
  s_ood->add_option("--out-split", od.out_split, "Out-of-distribution split")->capture_default_str();
  s_ood->add_option("--train-split", od.train_split, "Split for fitting the Mahalanobis baseline")
      ->capture_default_str();
  s_ood->add_option("--layer", od.layer, "Feature layer for the Mahalanobis baseline");
  s_ood->add_option("--temperature", od.temperature, "Energy temperature")->capture_default_str();
  s_ood->add_option("--reg", od.reg, "Covariance regularization")->capture_default_str();
  s_ood->add_option("--epsilon", od.epsilon, "LRP stabilizer")->capture_default_str();
  s_ood->add_option("--name", od.name, "Dataset name in the report");
  s_ood->add_option("--out", od.out, "Report directory");
  s_ood->add_option("--table", od.table, "Render the table for a report directory");

  std::string sim_store, sim_out;
  std::size_t sim_component = 0;
  auto* s_sim = app.add_subcommand("similarity", "Class similarity matrix of prototypes");
  s_sim->add_option("--store", sim_store, "Prototype store directory")->required();
  s_sim->add_option("--component", sim_component, "Component compared per class")->capture_default_str();
  s_sim->add_option("--out", sim_out, "CSV file (default: stdout)");

  std::string rm_dir, rm_out;
  std::optional<std::size_t> rm_layer;
  std::size_t rm_concept = 0, rm_k = 8;
  auto* s_rm = app.add_subcommand("relmax", "Samples with the highest relevance for a concept");
  s_rm->add_option("--attributions", rm_dir, "Attribution directory")->required();
  s_rm->add_option("--layer", rm_layer, "Layer index");
  s_rm->add_option("--concept", rm_concept, "Concept index")->required();
  s_rm->add_option("--k", rm_k, "Samples to select")->capture_default_str();
  s_rm->add_option("--out", rm_out, "JSON output");

  std::string oc_dir, oc_store, oc_out, oc_split = "train";
  std::size_t oc_class = 0, oc_k = 3;
  double oc_pct = 5.0;
  auto* s_oc = app.add_subcommand("outlier-clusters", "Group low-likelihood samples of a class");
  s_oc->add_option("--attributions", oc_dir, "Attribution directory")->required();
  s_oc->add_option("--store", oc_store, "Prototype store directory")->required();
  s_oc->add_option("--class", oc_class, "Class id")->required();
  s_oc->add_option("--percentile", oc_pct, "Likelihood percentile threshold")->capture_default_str();
  s_oc->add_option("--clusters", oc_k, "Number of groups")->capture_default_str();
  s_oc->add_option("--split", oc_split, "Split to scan (or all)")->capture_default_str();
  s_oc->add_option("--out", oc_out, "JSON output");

  SynthConfig sc;
  std::string synth_out;
  auto* s_syn = app.add_subcommand("synth", "Generate a synthetic dataset with a matching toy network");
  s_syn->add_option("--families", sc.families)->capture_default_str();
  s_syn->add_option("--classes-per-family", sc.classes_per_family)->capture_default_str();
  s_syn->add_option("--strategies", sc.strategies, "Sub-strategies per class")->capture_default_str();
  s_syn->add_option("--dimension", sc.dimension, "Concept count m")->capture_default_str();
  s_syn->add_option("--distractor-dims", sc.distractor_dims, "Concepts without class signal")->capture_default_str();
  s_syn->add_option("--separation", sc.separation, "Strategy separation in sigma")->capture_default_str();
  s_syn->add_option("--anisotropy", sc.anisotropy, "Variance ratio along each strategy axis")->capture_default_str();
  s_syn->add_option("--sigma", sc.sigma)->capture_default_str();
  s_syn->add_option("--distractor-scale", sc.distractor_scale)->capture_default_str();
  s_syn->add_option("--train", sc.train, "Training samples per strategy")->capture_default_str();
  s_syn->add_option("--holdout", sc.holdout, "Held-out samples per strategy")->capture_default_str();
  s_syn->add_option("--ood", sc.ood, "Out-of-distribution samples")->capture_default_str();
  s_syn->add_option("--out", synth_out, "Output directory")->required();

  std::set<std::string> names;
  for (auto* s : app.get_subcommands({})) {
    s->fallthrough();
    names.insert(s->get_name());
  }

  try {
    std::vector<std::string> args = expand_config(raw_args, names);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(std::move(args));
    } catch (const CLI::CallForHelp&) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return 0;
    } catch (const CLI::ParseError& e) {
      report_error(err, "usage", 2, e.what());
      return 2;
    }

    if (s_attr->parsed()) return cmd_attribute(attr, g, out);
    if (s_fit->parsed()) return cmd_fit(fit, g, out, err);
    if (s_val->parsed()) return cmd_validate(val, out);
    if (s_eval->parsed()) {
      if (ev.table.empty() && ev.metric.empty()) throw InputError("eval needs --metric or --table");
      return cmd_eval(ev, g, out);
    }
    if (s_ood->parsed()) {
      if (od.table.empty() && (od.scorer.empty() || od.net.empty() || od.in_manifest.empty()))
        throw InputError("ood needs --scorer, --net and --in-manifest (or --table)");
      return cmd_ood(od, g, out);
    }
    if (s_sim->parsed()) return cmd_similarity(sim_store, sim_out, sim_component, out);
    if (s_rm->parsed()) return cmd_relmax(rm_dir, rm_layer, rm_concept, rm_k, rm_out, out);
    if (s_oc->parsed()) return cmd_outlier_clusters(oc_dir, oc_store, oc_class, oc_pct, oc_k, oc_split, oc_out, g, out);
    if (s_syn->parsed()) {
      sc.seed = g.seed;
      const SynthData data = synth_generate(sc);
      write_synth(synth_out, data);
      out << "wrote " << data.samples.size() << " samples for " << sc.class_count() << " classes to " << synth_out
          << '\n';
      return 0;
    }
    return 0;
  } catch (const InputError& e) {
    report_error(err, "input", 2, e.what());
    return 2;
  } catch (const NumericalError& e) {
    report_error(err, "numerical", 3, e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "input", 2, e.what());
    return 2;
  }
}

}  // namespace pcx
