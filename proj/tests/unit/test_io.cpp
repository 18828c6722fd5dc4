#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "pcx/error.hpp"
#include "pcx/io.hpp"

using namespace pcx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pcx_unit_io_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PrototypeModel fitted(std::size_t class_id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Points pts(60, Vector(3));
  for (auto& p : pts)
    for (auto& v : p) v = g(rng) / 3.0;
  GmmOptions opt;
  opt.components = 2;
  opt.seed = seed;
  auto m = fit_gmm(pts, opt);
  m.class_id = class_id;
  m.layer_index = 4;
  m.method = "lrp-eps";
  return m;
}

void write_raw(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("prototype documents round trip exactly") {
  const auto m = fitted(2, 1);
  const auto doc = prototype_to_json(m);
  CHECK(doc.at("format") == "pcx-prototypes");
  const auto back = prototype_from_json(json::parse(doc.dump()));
  CHECK(back.class_id == 2);
  CHECK(back.layer_index == 4);
  CHECK(back.method == "lrp-eps");
  REQUIRE(back.components.size() == m.components.size());
  for (std::size_t i = 0; i < m.components.size(); ++i) {
    CHECK(back.components[i].weight() == m.components[i].weight());
    CHECK(back.components[i].mean() == m.components[i].mean());
    CHECK(back.components[i].covariance() == m.components[i].covariance());
  }
  CHECK(back.closest_training_index == m.closest_training_index);
  CHECK(back.fit.seed == m.fit.seed);
  CHECK(back.fit.reg == m.fit.reg);
  CHECK(back.fit.iterations == m.fit.iterations);
  CHECK(back.fit.converged == m.fit.converged);
  CHECK(back.fit.log_likelihood_history == m.fit.log_likelihood_history);
  CHECK(back.training_log_likelihoods == m.training_log_likelihoods);
  CHECK(log_likelihood_class(back, {0.1, 0.2, 0.3}) == log_likelihood_class(m, {0.1, 0.2, 0.3}));

  auto broken = doc;
  broken["components"][0]["covariance"].erase(0);
  CHECK_THROWS_AS(prototype_from_json(broken), InputError);
  CHECK_THROWS_AS(prototype_from_json(json{{"format", "pcx-prototypes"}}), InputError);
}

TEST_CASE("prototype stores") {
  TempDir dir("store");
  PrototypeStore store;
  store.layer_index = 4;
  store.method = "lrp-eps";
  store.models = {fitted(1, 2), fitted(0, 3)};
  store.partial = true;
  store.failures.push_back({{"class_id", 5}, {"error", "too few samples"}});
  save_prototype_store(dir.path, store);
  CHECK(fs::exists(dir.path / "store.json"));
  CHECK(fs::exists(dir.path / prototype_file_name(4, "lrp-eps", 0)));
  CHECK(prototype_file_name(4, "lrp-eps", 0) == "proto_l4_lrp-eps_c0.json");

  const auto back = load_prototype_store(dir.path);
  CHECK(back.layer_index == 4);
  CHECK(back.method == "lrp-eps");
  CHECK(back.partial);
  CHECK(back.failures.size() == 1);
  REQUIRE(back.models.size() == 2);
  CHECK(back.models[0].class_id == 0);
  CHECK(back.models[1].class_id == 1);

  CHECK_THROWS_AS(load_prototype_store(dir.path / "missing"), InputError);
}

TEST_CASE("manifests") {
  TempDir dir("manifest");
  fs::create_directories(dir.path / "s");
  write_tensor(dir.path / "s" / "a.pcxt", Tensor::vector({1, 2}));
  write_tensor(dir.path / "s" / "b.pcxt", Tensor::vector({3, 4}));
  DatasetManifest m;
  m.class_count = 2;
  m.entries = {{"a", "s/a.pcxt", 0, "train", 1, 0}, {"b", "s/b.pcxt", 1, "holdout", std::nullopt, std::nullopt}};
  save_manifest(dir.path / "manifest.json", m);

  const auto back = load_manifest(dir.path / "manifest.json");
  CHECK(back.class_count == 2);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].strategy == std::optional<std::size_t>(1));
  CHECK_FALSE(back.entries[1].strategy.has_value());
  CHECK(back.tensors[1] == Tensor::vector({3, 4}));

  const auto train = filter_split(back, "train");
  REQUIRE(train.entries.size() == 1);
  CHECK(train.entries[0].id == "a");
  CHECK(filter_split(back, "all").entries.size() == 2);
  CHECK(filter_split(back, "ood").entries.empty());

  write_raw(dir.path / "bad_label.json",
            R"({"class_count": 2, "samples": [{"id": "x", "path": "s/a.pcxt", "label": 2}]})");
  CHECK_THROWS_WITH_AS(load_manifest(dir.path / "bad_label.json"), doctest::Contains("label 2"), InputError);
  write_raw(dir.path / "bad_split.json",
            R"({"class_count": 2, "samples": [{"id": "x", "path": "s/a.pcxt", "label": 0, "split": "dev"}]})");
  CHECK_THROWS_WITH_AS(load_manifest(dir.path / "bad_split.json"), doctest::Contains("dev"), InputError);
  write_raw(dir.path / "missing.json",
            R"({"class_count": 2, "samples": [{"id": "x", "path": "s/nope.pcxt", "label": 0}]})");
  CHECK_THROWS_AS(load_manifest(dir.path / "missing.json"), InputError);
  write_raw(dir.path / "garbage.json", "{not json");
  CHECK_THROWS_AS(load_manifest(dir.path / "garbage.json"), InputError);
}

TEST_CASE("attribution sets") {
  TempDir dir("attr");
  AttributionSet set;
  set.rows = {{0.25, -0.75}, {0.5, 0.5}, {1.0, 0.0}};
  set.layer_index = 3;
  set.method = AttributionMethod::guided_backprop;
  set.sample_ids = {"a", "b", "c"};
  set.labels = {0, 1, 1};
  set.predicted = {0, 1, 0};
  set.splits = {"train", "train", "holdout"};
  set.strategies = {0, std::nullopt, 1};
  set.families = {0, 0, 0};
  set.dropped = {"z"};
  save_attribution_set(dir.path, set);
  CHECK(fs::exists(dir.path / "layer_3.pcxt"));
  CHECK(fs::exists(dir.path / "layer_3.json"));

  const auto back = load_attribution_set(dir.path);
  CHECK(back.rows == set.rows);
  CHECK(back.layer_index == 3);
  CHECK(back.method == AttributionMethod::guided_backprop);
  CHECK(back.sample_ids == set.sample_ids);
  CHECK(back.labels == set.labels);
  CHECK(back.predicted == set.predicted);
  CHECK(back.strategies == set.strategies);
  CHECK(back.dropped == set.dropped);
  CHECK(back.rows_where("train") == std::vector<std::size_t>{0, 1});
  CHECK(back.rows_where("train", 1) == std::vector<std::size_t>{1});
  CHECK(back.rows_where("", 1) == std::vector<std::size_t>{1, 2});

  set.layer_index = 5;
  save_attribution_set(dir.path, set);
  CHECK_THROWS_AS(load_attribution_set(dir.path), InputError);
  CHECK(load_attribution_set(dir.path, 5).layer_index == 5);
  CHECK_THROWS_AS(load_attribution_set(dir.path, 7), InputError);

  AttributionSet empty;
  CHECK_THROWS_AS(save_attribution_set(dir.path, empty), InputError);
}

TEST_CASE("eval reports") {
  const auto r = make_eval_report("stability", "lrp-eps",
                                  {{1, 0.8, 0.03, 10}, {2, 0.6, 0.04, 10}}, json{{"k", 5}});
  CHECK(std::abs(r.aggregate - 0.7) <= 1e-12);
  CHECK(std::abs(r.std_error - 0.025) <= 1e-12);
  const auto back = eval_report_from_json(json::parse(to_json(r).dump()));
  CHECK(back.metric == "stability");
  CHECK(back.aggregate == r.aggregate);
  CHECK(back.layers.size() == 2);
  CHECK(back.config.at("k") == 5);

  const auto s = make_eval_report("sparseness", "ixg", {{1, 0.25, 0.0, 4}}, json::object());
  const auto f = make_eval_report("faithfulness", "lrp-eps", {{1, 1.5, 0.1, 4}}, json::object());
  const auto table = render_eval_table({r, s, f});
  CHECK(table.find("0.7000 +- 0.0250") != std::string::npos);
  CHECK(table.find("0.2500 +- 0.0000") != std::string::npos);
  CHECK(table.find("faithfulness") < table.find("stability"));
  CHECK(table.find("stability") < table.find("sparseness"));
  CHECK(table.find("lrp-eps") < table.find("ixg"));

  const auto g = make_eval_report("coverage", "lrp-eps", {{1, 0.9, 0.0, 4}}, json{{"row", "gmm-loglik"}});
  const auto k = make_eval_report("coverage", "lrp-eps", {{1, 0.8, 0.0, 4}}, json{{"row", "kmeans-euclid"}});
  const auto grid = render_eval_table({g, k});
  CHECK(grid.find("kmeans-euclid") < grid.find("gmm-loglik"));

  CHECK_THROWS_AS(eval_report_from_json(json{{"metric", "x"}}), InputError);
}

TEST_CASE("ood reports") {
  OodReport r;
  r.scorer = "pcx-gmm";
  r.datasets = {{"synth-ood", 0.975, 100, 40}};
  const auto doc = to_json(r);
  CHECK(doc.at("orientation").get<std::string>().find("higher") != std::string::npos);
  const auto back = ood_report_from_json(json::parse(doc.dump()));
  CHECK(back.scorer == "pcx-gmm");
  CHECK(back.datasets[0].auc == 0.975);
  CHECK(back.datasets[0].out_count == 40);
  OodReport msp;
  msp.scorer = "msp";
  msp.datasets = {{"synth-ood", 0.5, 100, 40}};
  const auto table = render_ood_table({r, msp});
  CHECK(table.find("0.9750") != std::string::npos);
  CHECK(table.find("0.5000") != std::string::npos);
  CHECK(table.find("synth-ood") != std::string::npos);
}

TEST_CASE("json files") {
  TempDir dir("json");
  write_json(dir.path / "a.json", json{{"x", 0.1}});
  CHECK(read_json(dir.path / "a.json").at("x").get<double>() == 0.1);
  CHECK_THROWS_AS(read_json(dir.path / "none.json"), InputError);
  for (const auto& e : fs::directory_iterator(dir.path)) CHECK(e.path().filename() == "a.json");
}
