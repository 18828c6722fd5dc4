#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pcx/cli.hpp"
#include "pcx/error.hpp"
#include "pcx/io.hpp"
#include "pcx/kmeans.hpp"
#include "pcx/ood.hpp"

using namespace pcx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pcx_unit_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Two concepts; concept 0 carries class 0 and concept 1 carries class 1.
NetworkSpec toy_net() {
  return NetworkSpec({2}, 2,
                     {LayerSpec::dense(Tensor({2, 2}, {1, 0, 0, 1})), LayerSpec::relu(),
                      LayerSpec::dense(Tensor({2, 2}, {1, 0.2f, 0.2f, 1}))});
}

// Nine training points per class on a symmetric grid around the class centre,
// plus `extra` samples appended with their own split.
void write_toy(const TempDir& dir, const std::vector<std::pair<std::vector<float>, std::string>>& extra = {}) {
  save_network(dir.path / "net.json", toy_net());
  fs::create_directories(dir.path / "samples");
  DatasetManifest m;
  m.class_count = 2;
  auto add = [&](std::vector<float> x, std::size_t label, const std::string& split) {
    const std::string id = "s" + std::to_string(m.entries.size());
    write_tensor(dir.path / "samples" / (id + ".pcxt"), Tensor({2}, std::move(x)));
    m.entries.push_back({id, "samples/" + id + ".pcxt", label, split, std::nullopt, std::nullopt});
  };
  for (std::size_t c = 0; c < 2; ++c)
    for (float dx : {-0.2f, 0.0f, 0.2f})
      for (float dy : {-0.2f, 0.0f, 0.2f}) {
        const float a = 2.0f + dx, b = 0.5f + dy;
        add(c == 0 ? std::vector<float>{a, b} : std::vector<float>{b, a}, c, "train");
      }
  for (const auto& [x, split] : extra) add(x, x[0] > x[1] ? 0 : 1, split);
  save_manifest(dir.path / "manifest.json", m);
}

// Synthetic data, attributions and a k-prototype store under `dir`.
void synth_pipeline(const TempDir& dir, const std::vector<std::string>& synth_flags, std::size_t k) {
  std::vector<std::string> args{"--seed", "3", "synth", "--out", dir / "data"};
  args.insert(args.end(), synth_flags.begin(), synth_flags.end());
  REQUIRE(run(args).code == 0);
  REQUIRE(run({"attribute", "--net", dir / "data/net.json", "--manifest", dir / "data/manifest.json", "--split", "all",
               "--out", dir / "attr"})
              .code == 0);
  REQUIRE(run({"--seed", "3", "fit", "--attributions", dir / "attr", "--k", std::to_string(k), "--out", dir / "store"})
              .code == 0);
}

json eval_report(const fs::path& dir, const std::string& metric, const std::string& row = "") {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    const auto doc = read_json(e.path());
    if (doc.value("metric", "") == metric && doc["config"].value("row", "") == row) return doc;
  }
  FAIL("no report for " << metric << " " << row);
  return {};
}

}  // namespace

TEST_CASE("attribute writes normalized matrices") {
  TempDir dir("attribute");
  write_toy(dir);
  const auto r = run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1",
                      "--out", dir / "a"});
  REQUIRE(r.code == 0);
  const auto set = load_attribution_set(dir / "a");
  CHECK(set.rows.size() == 18);
  CHECK(set.layer_index == 1);
  CHECK(set.normalized);
  for (const auto& row : set.rows) CHECK(std::abs(std::abs(row[0]) + std::abs(row[1]) - 1.0) <= 1e-6);
  CHECK(load_attribution_set(dir / "a").predicted == set.labels);

  REQUIRE(run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1", "--method",
               "activation-sum", "--out", dir / "b"})
              .code == 0);
  CHECK(read_json(dir.path / "b" / "layer_1.json").at("flavor") == "activation");
  CHECK(read_json(dir.path / "a" / "layer_1.json").at("flavor") == "relevance");

  REQUIRE(run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1",
               "--threads", "3", "--out", dir / "c"})
              .code == 0);
  CHECK(slurp(dir.path / "a" / "layer_1.pcxt") == slurp(dir.path / "c" / "layer_1.pcxt"));
  CHECK(slurp(dir.path / "a" / "layer_1.json") == slurp(dir.path / "c" / "layer_1.json"));
}

TEST_CASE("fit stores per-class models") {
  TempDir dir("fit");
  write_toy(dir);
  REQUIRE(run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1", "--out",
               dir / "a"})
              .code == 0);
  REQUIRE(run({"fit", "--attributions", dir / "a", "--k", "1", "--out", dir / "s"}).code == 0);
  const auto set = load_attribution_set(dir / "a");
  const auto store = load_prototype_store(dir / "s");
  REQUIRE(store.models.size() == 2);
  CHECK_FALSE(store.partial);
  for (const auto& model : store.models) {
    Points rows;
    for (auto i : set.rows_where("train", model.class_id)) rows.push_back(set.rows[i]);
    const auto mu = mean_of(rows);
    for (std::size_t d = 0; d < mu.size(); ++d) CHECK(std::abs(model.components[0].mean()[d] - mu[d]) <= 1e-12);
    const auto& closest = rows.at(model.closest_training_index[0]);
    for (const auto& p : rows)
      CHECK(squared_distance(closest, model.components[0].mean()) <= squared_distance(p, model.components[0].mean()));
  }

  // Nine samples per class cannot carry ten prototypes: partial store, exit 2.
  const auto r = run({"fit", "--attributions", dir / "a", "--k", "10", "--out", dir / "p"});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err).at("failures").size() == 2);
  CHECK(load_prototype_store(dir / "p").partial);
}

TEST_CASE("fit recovers planted sub-strategies") {
  TempDir dir("strategies");
  synth_pipeline(dir,
                 {"--classes-per-family", "2", "--strategies", "2", "--dimension", "8", "--train", "60", "--separation", "16"},
                 2);
  const auto set = load_attribution_set(dir / "attr");
  const auto store = load_prototype_store(dir / "store");
  for (const auto& model : store.models) {
    std::map<std::size_t, std::size_t> component_of;
    bool consistent = true;
    for (auto i : set.rows_where("train")) {
      if (set.predicted[i] != model.class_id) continue;
      const auto a = assign_prototype({model}, set.rows[i]);
      auto [it, fresh] = component_of.emplace(*set.strategies[i], a.component);
      consistent = consistent && it->second == a.component;
    }
    CHECK(consistent);
    REQUIRE(component_of.size() == 2);
    CHECK(component_of[0] != component_of[1]);
  }
}

TEST_CASE("validate reports") {
  TempDir dir("validate");
  write_toy(dir, {{{2.0f, 0.5f}, "holdout"}, {{2.0f, 1.9f}, "holdout"}, {{0.5f, 2.0f}, "holdout"}});
  REQUIRE(run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1", "--out",
               dir / "a"})
              .code == 0);
  REQUIRE(run({"fit", "--attributions", dir / "a", "--k", "1", "--out", dir / "s"}).code == 0);
  auto validate = [&](const std::string& id, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"validate", "--net",   dir / "net.json", "--store", dir / "s", "--manifest",
                                  dir / "manifest.json", "--sample", id,   "--out",   dir / (id + ".json")};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run(args);
    REQUIRE(r.code == 0);
    return read_json(dir.path / (id + ".json"));
  };

  SUBCASE("a sample at the prototype mean") {
    const auto rep = validate("s18");
    CHECK(rep.at("predicted_class") == 0);
    CHECK(rep.at("percentile").get<double>() >= 50.0);
    CHECK(rep.at("verdict") == "in-distribution");
    for (const auto& u : rep.at("delta").at("usage")) CHECK(u == "similar");
    CHECK(rep.at("top_sample").size() == 2);
    CHECK(rep.at("top_sample")[0].at("concept") == 0);

    // Same likelihood as evaluating the stored mixture directly.
    const auto store = load_prototype_store(dir / "s");
    const auto x = read_tensor(dir.path / "samples" / "s18.pcxt");
    const auto v = normalize(attribute(toy_net(), x, AttributionMethod::lrp_epsilon, 0, 1)).values;
    CHECK(std::abs(rep.at("log_likelihood").get<double>() - log_likelihood_class(store.models[0], v)) <= 1e-12);
  }

  SUBCASE("a planted outlier") {
    const auto rep = validate("s19", {"--csv", dir / "s19.csv"});
    CHECK(rep.at("predicted_class") == 0);
    CHECK(rep.at("verdict") == "outlier");
    CHECK(rep.at("log_likelihood").get<double>() < rep.at("threshold_value").get<double>());
    CHECK(slurp(dir.path / "s19.csv").rfind("concept,", 0) == 0);
  }

  SUBCASE("counterfactual comparison flips the discriminative concept") {
    const auto own = validate("s18");
    const auto against = validate("s18", {"--against-class", "1"});
    CHECK(against.at("reference_class") == 1);
    CHECK(against.at("predicted_class") == 0);
    CHECK(against.at("delta").at("usage")[0] == "overused");
    CHECK(against.at("delta").at("usage")[1] == "underused");
    const auto other = validate("s20", {"--against-class", "0"});
    CHECK(other.at("delta").at("values")[0].get<double>() < -0.02);
    CHECK(std::abs(own.at("delta").at("values")[0].get<double>()) <= 0.02);
  }

  SUBCASE("missing class in the store") {
    fs::remove(dir.path / "s" / prototype_file_name(1, "lrp-eps", 1));
    auto store = read_json(dir.path / "s" / "store.json");
    store["classes"].erase(1);
    write_json(dir.path / "s" / "store.json", store);
    const auto r = run({"validate", "--net", dir / "net.json", "--store", dir / "s", "--manifest",
                        dir / "manifest.json", "--sample", "s20"});
    CHECK(r.code == 2);
    CHECK(json::parse(r.err).at("message").get<std::string>().find("class 1") != std::string::npos);
  }
}

TEST_CASE("eval metrics and tables") {
  TempDir dir("eval");
  const auto bad = run({"eval", "--metric", "accuracy", "--attributions", dir / "none", "--out", dir / "r"});
  CHECK(bad.code == 2);
  for (const char* m : {"faithfulness", "stability", "sparseness", "coverage", "outlier", "clustering-compare"})
    CHECK(bad.err.find(m) != std::string::npos);

  SUBCASE("sparseness of one-hot means") {
    PrototypeStore store;
    store.layer_index = 1;
    store.method = "lrp-eps";
    for (std::size_t c = 0; c < 4; ++c) {
      PrototypeModel m;
      m.class_id = c;
      m.layer_index = 1;
      m.method = "lrp-eps";
      Vector mu(4, 0.0);
      mu[c] = 1.0;
      m.components.emplace_back(1.0, mu, Eigen::MatrixXd::Identity(4, 4));
      m.closest_training_index = {0};
      store.models.push_back(std::move(m));
    }
    save_prototype_store(dir.path / "onehot", store);
    const auto r = run({"eval", "--metric", "sparseness", "--store", dir / "onehot", "--out", dir / "r"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("0.5000 +- 0.0000") != std::string::npos);
    CHECK(eval_report(dir.path / "r", "sparseness").at("aggregate").get<double>() == doctest::Approx(0.5));
    const auto t = run({"eval", "--table", dir / "r"});
    REQUIRE(t.code == 0);
    CHECK(slurp(dir.path / "r" / "table.txt") == t.out);
  }

  SUBCASE("synthetic data") {
    synth_pipeline(dir, {"--classes-per-family", "3", "--strategies", "2", "--dimension", "9", "--train", "80",
                         "--holdout", "40"},
                   2);
    const auto o = run({"eval", "--metric", "outlier", "--attributions", dir / "attr", "--k", "2", "--out", dir / "r"});
    REQUIRE(o.code == 0);
    CHECK(eval_report(dir.path / "r", "outlier").at("aggregate").get<double>() >= 0.99);

    const auto c = run({"eval", "--metric", "coverage", "--attributions", dir / "attr", "--out", dir / "r"});
    REQUIRE(c.code == 0);
    CHECK(eval_report(dir.path / "r", "coverage").at("aggregate").get<double>() >= 0.95);

    const auto cc = run({"eval", "--metric", "clustering-compare", "--attributions", dir / "attr", "--out", dir / "r"});
    REQUIRE(cc.code == 0);
    const double km = eval_report(dir.path / "r", "coverage", "kmeans-euclid").at("aggregate").get<double>();
    const double ge = eval_report(dir.path / "r", "coverage", "gmm-euclid").at("aggregate").get<double>();
    const double gl = eval_report(dir.path / "r", "coverage", "gmm-loglik").at("aggregate").get<double>();
    CHECK(std::abs(km - ge) <= 0.01);
    CHECK(std::abs(ge - gl) <= 0.01);
    CHECK(std::abs(km - gl) <= 0.01);

    const auto s = run({"eval", "--metric", "stability", "--attributions", dir / "attr", "--stability-k", "2",
                        "--folds", "4", "--out", dir / "r"});
    REQUIRE(s.code == 0);
    const auto st = eval_report(dir.path / "r", "stability");
    CHECK(st.at("aggregate").get<double>() > 0.9);
    CHECK(st.at("config").at("prototypes") == 2);

    const auto f = run({"eval", "--metric", "faithfulness", "--attributions", dir / "attr", "--net",
                        dir / "data/net.json", "--manifest", dir / "data/manifest.json", "--k", "2", "--out", dir / "r"});
    REQUIRE(f.code == 0);
    CHECK(eval_report(dir.path / "r", "faithfulness").at("aggregate").get<double>() > 0.0);
    CHECK(fs::exists(dir.path / "r" / "faithfulness-0.1_lrp-eps.json"));

    const auto t = run({"eval", "--table", dir / "r"});
    REQUIRE(t.code == 0);
    CHECK(t.out.find("gmm-loglik") != std::string::npos);
    CHECK(t.out.find("faithfulness@0.1") != std::string::npos);
  }
}

TEST_CASE("synthetic generator through the command line") {
  TempDir dir("synth");
  REQUIRE(run({"--seed", "9", "synth", "--out", dir / "a"}).code == 0);
  REQUIRE(run({"--seed", "9", "synth", "--out", dir / "b"}).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), dir.path / "a");
    CHECK(slurp(e.path()) == slurp(dir.path / "b" / rel));
  }
  CHECK(files > 100);
  CHECK(read_json(dir.path / "a" / "ground_truth.json").at("concept_layer") == 1);

  synth_pipeline(dir, {"--separation", "0", "--strategies", "2", "--train", "100", "--holdout", "200"}, 2);
  REQUIRE(run({"eval", "--metric", "coverage", "--attributions", dir / "attr", "--out", dir / "r"}).code == 0);
  CHECK(std::abs(eval_report(dir.path / "r", "coverage").at("aggregate").get<double>() - 0.5) <= 0.1);

  CHECK(run({"synth", "--strategies", "0", "--out", dir / "c"}).code == 2);
}

TEST_CASE("ood, similarity, relmax and outlier clusters") {
  TempDir dir("misc");
  synth_pipeline(dir, {"--dimension", "8", "--strategies", "1", "--ood", "40"}, 1);

  for (const char* scorer : {"msp", "energy", "mahalanobis-baseline", "pcx-gmm", "pcx-e"}) {
    const auto r = run({"ood", "--scorer", scorer, "--net", dir / "data/net.json", "--store", dir / "store",
                        "--in-manifest", dir / "data/manifest.json", "--name", "synth", "--out", dir / "ood"});
    REQUIRE(r.code == 0);
    const auto doc = read_json(dir.path / "ood" / (std::string(scorer) + "_synth.json"));
    const double auc = doc.at("datasets")[0].at("auc").get<double>();
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
    CHECK(fs::exists(dir.path / "ood" / (std::string(scorer) + "_synth_scores.csv")));
    CHECK(fs::exists(dir.path / "ood" / (std::string(scorer) + "_synth_histogram.csv")));
  }
  CHECK(read_json(dir.path / "ood" / "pcx-gmm_synth.json").at("datasets")[0].at("auc").get<double>() >= 0.99);
  const auto table = run({"ood", "--table", dir / "ood"});
  REQUIRE(table.code == 0);
  CHECK(table.out.find("pcx-gmm") != std::string::npos);
  CHECK(run({"ood", "--scorer", "pcx-gmm", "--net", dir / "data/net.json", "--in-manifest", dir / "data/manifest.json",
             "--out", dir / "ood"})
            .code == 2);
  CHECK(run({"ood", "--scorer", "msp", "--net", dir / "data/net.json", "--in-manifest", dir / "data/manifest.json",
             "--out-split", "missing", "--out", dir / "ood"})
            .code == 2);

  const auto sim = run({"similarity", "--store", dir / "store"});
  REQUIRE(sim.code == 0);
  std::istringstream lines(sim.out);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "class,0,1");
  std::vector<std::vector<double>> m;
  for (std::string line; std::getline(lines, line);) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    m.emplace_back();
    while (std::getline(cells, cell, ',')) m.back().push_back(std::stod(cell));
  }
  REQUIRE(m.size() == 2);
  CHECK(std::abs(m[0][0] - 1.0) <= 1e-12);
  CHECK(std::abs(m[1][1] - 1.0) <= 1e-12);
  CHECK(m[0][1] == m[1][0]);

  const auto rm = run({"relmax", "--attributions", dir / "attr", "--concept", "0", "--k", "3", "--out", dir / "rm.json"});
  REQUIRE(rm.code == 0);
  const auto set = load_attribution_set(dir / "attr");
  const auto picks = relmax_select(set.rows, 0, 3);
  const auto doc = read_json(dir.path / "rm.json");
  CHECK(doc.dump().find(set.sample_ids[picks[0]]) != std::string::npos);

  const auto oc = run({"outlier-clusters", "--attributions", dir / "attr", "--store", dir / "store", "--class", "0",
                       "--split", "all", "--clusters", "2", "--out", dir / "oc.json"});
  REQUIRE(oc.code == 0);
  CHECK_FALSE(read_json(dir.path / "oc.json").at("outliers").empty());
}

TEST_CASE("exit codes and config overrides") {
  TempDir dir("codes");
  const auto missing = run({"fit", "--attributions", dir / "nothing", "--out", dir / "s"});
  CHECK(missing.code == 2);
  const auto diag = json::parse(missing.err);
  CHECK(diag.at("exit_code") == 2);
  CHECK(diag.at("message").get<std::string>().find("nothing") != std::string::npos);

  CHECK(run({"no-such-command"}).code == 2);
  CHECK(run({"eval", "--metric", "sparseness", "--bogus", "1"}).code == 2);

  // A zero prototype mean is a numerical failure.
  PrototypeStore store;
  store.layer_index = 1;
  store.method = "lrp-eps";
  for (std::size_t c = 0; c < 2; ++c) {
    PrototypeModel m;
    m.class_id = c;
    m.method = "lrp-eps";
    m.layer_index = 1;
    m.components.emplace_back(1.0, Vector{0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2));
    m.closest_training_index = {0};
    store.models.push_back(std::move(m));
  }
  save_prototype_store(dir.path / "zero", store);
  const auto num = run({"similarity", "--store", dir / "zero"});
  CHECK(num.code == 3);
  CHECK(json::parse(num.err).at("error") == "numerical");

  write_toy(dir);
  REQUIRE(run({"attribute", "--net", dir / "net.json", "--manifest", dir / "manifest.json", "--layer", "1", "--out",
               dir / "a"})
              .code == 0);
  write_json(dir.path / "cfg.json", json{{"fit", {{"k", 1}}}, {"eval", {{"k", 7}}}});
  const auto r = run({"--config", dir / "cfg.json", "fit", "--attributions", dir / "a", "--k", "10", "--out", dir / "s"});
  CHECK(r.code == 0);
  CHECK(load_prototype_store(dir / "s").models.at(0).components.size() == 1);
}
