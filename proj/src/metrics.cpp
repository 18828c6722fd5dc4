#include "pcx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcx/error.hpp"
#include "pcx/hungarian.hpp"
#include "pcx/kmeans.hpp"
#include "pcx/parallel.hpp"
#include "pcx/random.hpp"

namespace pcx {

Estimate mean_estimate(const std::vector<double>& values) {
  Estimate e;
  e.count = values.size();
  if (values.empty()) return e;
  for (double v : values) e.value += v;
  e.value /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.value) * (v - e.value);
    e.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
  }
  return e;
}

Estimate subset_estimate(const std::vector<double>& values, std::size_t subsets) {
  Estimate e = mean_estimate(values);
  subsets = std::min(subsets, values.size());
  if (subsets < 2) return e;
  std::vector<double> means(subsets, 0.0), counts(subsets, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    means[i % subsets] += values[i];
    counts[i % subsets] += 1.0;
  }
  for (std::size_t s = 0; s < subsets; ++s) means[s] /= counts[s];
  e.std_error = mean_estimate(means).std_error;
  return e;
}

// --- faithfulness -----------------------------------------------------------

std::vector<std::size_t> removal_order(const Vector& prototype_mean) {
  std::vector<std::size_t> order(prototype_mean.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return prototype_mean[a] > prototype_mean[b]; });
  return order;
}

std::vector<double> deletion_logits(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                                    std::size_t layer_index, const std::vector<std::size_t>& order,
                                    double fraction_removed) {
  if (!(fraction_removed > 0.0 && fraction_removed <= 1.0))
    throw InputError("fraction_removed must lie in (0, 1]");
  if (class_index >= net.class_count()) throw InputError("class index out of range");
  const auto trace = forward(net, input);
  if (layer_index >= trace.outputs.size()) throw InputError("layer index out of range");
  Tensor patched = trace.outputs[layer_index];
  const std::size_t channels = patched.dim(0), spatial = patched.size() / channels;
  if (order.size() != channels)
    throw InputError("removal order has " + std::to_string(order.size()) + " concepts, layer has " +
                     std::to_string(channels));
  const auto steps = static_cast<std::size_t>(std::ceil(fraction_removed * static_cast<double>(channels) - 1e-9));
  std::vector<double> logits{trace.logits()[class_index]};
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t c = order[s];
    std::fill_n(patched.data().begin() + static_cast<std::ptrdiff_t>(c * spatial), spatial, 0.0f);
    logits.push_back(forward_from(net, layer_index, patched)[class_index]);
  }
  return logits;
}

double drop_curve_auc(const std::vector<double>& logits, std::size_t concept_count) {
  const double dt = 1.0 / static_cast<double>(concept_count);
  double area = 0.0;
  for (std::size_t s = 1; s < logits.size(); ++s)
    area += 0.5 * dt * ((logits[0] - logits[s - 1]) + (logits[0] - logits[s]));
  return area;
}

FaithfulnessResult faithfulness(const NetworkSpec& net, const std::vector<FaithfulnessSample>& samples,
                                const PrototypeModel& model, std::size_t layer_index, double fraction_removed,
                                std::size_t threads) {
  if (!(fraction_removed > 0.0 && fraction_removed <= 1.0))
    throw InputError("fraction_removed must lie in (0, 1]");
  if (samples.empty()) throw InputError("faithfulness needs at least one sample");
  const std::vector<PrototypeModel> single{model};
  FaithfulnessResult res;
  res.per_sample.resize(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto nearest = assign_prototype(single, samples[i].concepts);
    const auto order = removal_order(model.components[nearest.component].mean());
    const auto logits = deletion_logits(net, samples[i].input, model.class_id, layer_index, order, fraction_removed);
    res.per_sample[i] = drop_curve_auc(logits, order.size());
  });
  res.score = subset_estimate(res.per_sample, 8);
  return res;
}

// --- stability --------------------------------------------------------------

Estimate stability_from_prototypes(const std::vector<Points>& prototype_sets) {
  if (prototype_sets.size() < 2) throw InputError("stability needs at least two prototype sets");
  std::vector<double> matched;
  for (std::size_t a = 0; a < prototype_sets.size(); ++a)
    for (std::size_t b = a + 1; b < prototype_sets.size(); ++b) {
      const auto& pa = prototype_sets[a];
      const auto& pb = prototype_sets[b];
      if (pa.size() != pb.size()) throw InputError("prototype sets differ in size");
      std::vector<std::vector<double>> cos(pa.size(), std::vector<double>(pb.size()));
      std::vector<std::vector<double>> cost = cos;
      for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pb.size(); ++j) {
          cos[i][j] = cosine_similarity(pa[i], pb[j]);
          cost[i][j] = 1.0 - cos[i][j];
        }
      const auto cols = solve_assignment(cost);
      for (std::size_t i = 0; i < cols.size(); ++i) matched.push_back(cos[i][cols[i]]);
    }
  return mean_estimate(matched);
}

Estimate stability(const Points& points, std::size_t k, std::size_t folds, std::uint64_t seed, double reg) {
  if (folds < 2) throw InputError("stability needs at least 2 folds");
  if (points.size() < folds * k)
    throw InputError("stability needs " + std::to_string(k) + " samples in each of " + std::to_string(folds) +
                     " folds, got " + std::to_string(points.size()) + " samples");
  std::vector<std::size_t> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);

  std::vector<Points> prototypes;
  for (std::size_t f = 0; f < folds; ++f) {
    Points fold;
    for (std::size_t i = f; i < idx.size(); i += folds) fold.push_back(points[idx[i]]);
    if (std::all_of(fold.begin(), fold.end(), [&](const Vector& p) { return p == fold.front(); }))
      throw NumericalError("stability fold " + std::to_string(f) + " is degenerate (all points identical)");
    const auto model = fit_gmm(fold, {k, seed, reg});
    Points means;
    for (const auto& c : model.components) means.push_back(c.mean());
    prototypes.push_back(std::move(means));
  }
  return stability_from_prototypes(prototypes);
}

// --- sparseness -------------------------------------------------------------

double sparseness_of(const Vector& mean) {
  if (mean.empty()) throw InputError("sparseness of an empty vector");
  double l1 = 0.0, l2 = 0.0;
  for (double v : mean) {
    l1 += std::abs(v);
    l2 += v * v;
  }
  if (l2 == 0.0) throw NumericalError("sparseness of a zero prototype mean");
  return 1.0 - l1 / (std::sqrt(l2) * std::sqrt(static_cast<double>(mean.size())));
}

Estimate sparseness(const PrototypeModel& model) {
  std::vector<double> values;
  for (const auto& c : model.components) values.push_back(sparseness_of(c.mean()));
  return mean_estimate(values);
}

// --- coverage and outlier detection ----------------------------------------

std::string_view to_string(AssignmentRegime regime) {
  switch (regime) {
    case AssignmentRegime::kmeans_euclid: return "kmeans-euclid";
    case AssignmentRegime::gmm_euclid: return "gmm-euclid";
    case AssignmentRegime::gmm_loglik: return "gmm-loglik";
  }
  return "?";
}

std::vector<PrototypeModel> fit_strategy_prototypes(const std::vector<Points>& train_by_strategy,
                                                    std::uint64_t seed, double reg) {
  std::vector<PrototypeModel> models;
  for (std::size_t s = 0; s < train_by_strategy.size(); ++s) {
    if (train_by_strategy[s].empty()) throw InputError("strategy " + std::to_string(s) + " has no training points");
    auto model = fit_gmm(train_by_strategy[s], {1, seed, reg});
    model.class_id = s;
    models.push_back(std::move(model));
  }
  return models;
}

double coverage_with(const std::vector<PrototypeModel>& strategy_models, const std::vector<Points>& test_by_strategy) {
  std::size_t correct = 0, total = 0;
  for (std::size_t s = 0; s < test_by_strategy.size(); ++s) {
    if (test_by_strategy[s].empty()) throw InputError("strategy " + std::to_string(s) + " has no held-out points");
    for (const auto& v : test_by_strategy[s]) {
      correct += assign_prototype(strategy_models, v).class_id == s ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double coverage(const std::vector<Points>& train_by_strategy, const std::vector<Points>& test_by_strategy,
                std::uint64_t seed, double reg) {
  if (train_by_strategy.size() != test_by_strategy.size())
    throw InputError("train and held-out splits list different strategy counts");
  return coverage_with(fit_strategy_prototypes(train_by_strategy, seed, reg), test_by_strategy);
}

double outlier_auc(const std::vector<double>& in_scores, const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty()) throw InputError("AUC needs non-empty in and out score lists");
  struct Entry {
    double score;
    bool in;
  };
  std::vector<Entry> all;
  for (double s : in_scores) all.push_back({s, true});
  for (double s : out_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // Mann-Whitney U with mid-ranks for tied groups.
  double rank_sum_in = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (all[t].in) rank_sum_in += mid_rank;
    i = j;
  }
  const double n_in = static_cast<double>(in_scores.size()), n_out = static_cast<double>(out_scores.size());
  const double u = rank_sum_in - n_in * (n_in + 1.0) / 2.0;
  return u / (n_in * n_out);
}

Estimate outlier_detection(const std::vector<Points>& train_by_class, const std::vector<Points>& holdout_by_class,
                           const GmmOptions& options) {
  if (train_by_class.size() < 2 || train_by_class.size() != holdout_by_class.size())
    throw InputError("outlier detection needs matching train and held-out splits for at least two classes");
  std::vector<double> aucs;
  for (std::size_t c = 0; c < train_by_class.size(); ++c) {
    const auto model = fit_gmm(train_by_class[c], options);
    std::vector<double> in, out;
    for (const auto& v : holdout_by_class[c]) in.push_back(log_likelihood_class(model, v));
    for (std::size_t o = 0; o < holdout_by_class.size(); ++o)
      if (o != c)
        for (const auto& v : holdout_by_class[o]) out.push_back(log_likelihood_class(model, v));
    aucs.push_back(outlier_auc(in, out));
  }
  return mean_estimate(aucs);
}

namespace {

// Cluster index -> strategy label, maximizing agreement on the training split.
std::vector<std::size_t> match_clusters(const std::vector<std::size_t>& clusters, const std::vector<std::size_t>& labels,
                                        std::size_t k, std::size_t strategies) {
  std::vector<std::vector<double>> counts(k, std::vector<double>(strategies, 0.0));
  for (std::size_t i = 0; i < clusters.size(); ++i) counts[clusters[i]][labels[i]] += 1.0;
  std::vector<std::size_t> mapping(k);
  for (std::size_t c = 0; c < k; ++c)
    mapping[c] = static_cast<std::size_t>(std::max_element(counts[c].begin(), counts[c].end()) - counts[c].begin());
  if (k <= strategies) {
    auto cost = counts;
    for (auto& row : cost)
      for (auto& x : row) x = -x;
    mapping = solve_assignment(cost);
  } else {
    std::vector<std::vector<double>> cost(strategies, std::vector<double>(k));
    for (std::size_t s = 0; s < strategies; ++s)
      for (std::size_t c = 0; c < k; ++c) cost[s][c] = -counts[c][s];
    const auto cols = solve_assignment(cost);
    for (std::size_t s = 0; s < strategies; ++s) mapping[cols[s]] = s;
  }
  return mapping;
}

}  // namespace

std::vector<ClusteringRow> compare_clusterings(const ClusteringData& data, std::size_t k, std::uint64_t seed,
                                               double reg) {
  const std::size_t strategies = data.train_by_strategy.size();
  if (strategies == 0 || data.holdout_by_strategy.size() != strategies)
    throw InputError("clustering comparison needs train and held-out points for every strategy");
  Points pooled;
  std::vector<std::size_t> labels;
  for (std::size_t s = 0; s < strategies; ++s) {
    if (data.train_by_strategy[s].empty() || data.holdout_by_strategy[s].empty())
      throw InputError("strategy " + std::to_string(s) + " is empty");
    for (const auto& v : data.train_by_strategy[s]) {
      pooled.push_back(v);
      labels.push_back(s);
    }
  }
  const auto km = kmeans(pooled, k, seed);
  const auto gmm = fit_gmm(pooled, {k, seed, reg});
  Points gmm_means;
  for (const auto& c : gmm.components) gmm_means.push_back(c.mean());
  const std::vector<PrototypeModel> gmm_models{gmm};

  std::vector<ClusteringRow> rows;
  for (auto regime : {AssignmentRegime::kmeans_euclid, AssignmentRegime::gmm_euclid, AssignmentRegime::gmm_loglik}) {
    auto cluster_of = [&](const Vector& v) -> std::size_t {
      switch (regime) {
        case AssignmentRegime::kmeans_euclid: return nearest_centroid(km.centroids, v);
        case AssignmentRegime::gmm_euclid: return nearest_centroid(gmm_means, v);
        case AssignmentRegime::gmm_loglik: return assign_prototype(gmm_models, v).component;
      }
      return 0;
    };
    auto in_score = [&](const Vector& v) -> double {
      switch (regime) {
        case AssignmentRegime::kmeans_euclid:
          return -std::sqrt(squared_distance(v, km.centroids[nearest_centroid(km.centroids, v)]));
        case AssignmentRegime::gmm_euclid:
          return -std::sqrt(squared_distance(v, gmm_means[nearest_centroid(gmm_means, v)]));
        case AssignmentRegime::gmm_loglik: return log_likelihood_class(gmm, v);
      }
      return 0.0;
    };
    std::vector<std::size_t> train_clusters;
    for (const auto& v : pooled) train_clusters.push_back(cluster_of(v));
    const auto mapping = match_clusters(train_clusters, labels, k, strategies);

    ClusteringRow row;
    row.regime = regime;
    std::size_t correct = 0, total = 0;
    std::vector<double> in_scores, out_scores;
    for (std::size_t s = 0; s < strategies; ++s)
      for (const auto& v : data.holdout_by_strategy[s]) {
        const auto label = mapping[cluster_of(v)];
        row.holdout_assignment.push_back(label);
        correct += label == s ? 1 : 0;
        ++total;
        in_scores.push_back(in_score(v));
      }
    for (const auto& v : data.outliers) out_scores.push_back(in_score(v));
    row.coverage = static_cast<double>(correct) / static_cast<double>(total);
    row.outlier_auc = outlier_auc(in_scores, out_scores);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pcx
