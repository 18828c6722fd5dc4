#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/network.hpp"
#include "pcx/points.hpp"
#include "pcx/prototype.hpp"

namespace pcx {

/// Point estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

/// Mean and standard error of the mean.
Estimate mean_estimate(const std::vector<double>& values);
/// Mean over all values, standard error over the means of `subsets` interleaved subsets.
Estimate subset_estimate(const std::vector<double>& values, std::size_t subsets = 8);

// --- faithfulness -----------------------------------------------------------

/// Concept indices by descending prototype relevance, lower index first on ties.
std::vector<std::size_t> removal_order(const Vector& prototype_mean);

/// Class logit after zeroing the first 0, 1, ..., n concepts of `order` at `layer_index`,
/// where n = ceil(fraction_removed * m).
std::vector<double> deletion_logits(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                                    std::size_t layer_index, const std::vector<std::size_t>& order,
                                    double fraction_removed);

/// Trapezoidal area under d(t) = y(0) - y(t) for logits sampled at t = s / m.
double drop_curve_auc(const std::vector<double>& logits, std::size_t concept_count);

struct FaithfulnessSample {
  Tensor input;
  Vector concepts;  // concept vector used to pick the nearest prototype
};

struct FaithfulnessResult {
  Estimate score;  // standard error over 8 sample subsets
  std::vector<double> per_sample;
};

/// Removes concepts in the order of the nearest class prototype's mean relevance.
FaithfulnessResult faithfulness(const NetworkSpec& net, const std::vector<FaithfulnessSample>& samples,
                                const PrototypeModel& model, std::size_t layer_index, double fraction_removed,
                                std::size_t threads = 1);

// --- stability --------------------------------------------------------------

/// Mean Hungarian-matched cosine similarity over all pairs of prototype sets.
Estimate stability_from_prototypes(const std::vector<Points>& prototype_sets);

/// Fits `k` prototypes on each of `folds` disjoint subsets and compares them pairwise.
Estimate stability(const Points& points, std::size_t k, std::size_t folds, std::uint64_t seed, double reg = 1e-6);

// --- sparseness -------------------------------------------------------------

/// 1 - cos(|mu|, 1 / sqrt(m)).
double sparseness_of(const Vector& mean);
Estimate sparseness(const PrototypeModel& model);

// --- coverage and outlier detection ----------------------------------------

enum class AssignmentRegime { kmeans_euclid, gmm_euclid, gmm_loglik };
std::string_view to_string(AssignmentRegime regime);

/// Prototype models, one per strategy with `class_id` set to the strategy index.
std::vector<PrototypeModel> fit_strategy_prototypes(const std::vector<Points>& train_by_strategy,
                                                    std::uint64_t seed, double reg = 1e-6);

/// Fraction of held-out points whose assigned prototype matches their strategy.
double coverage(const std::vector<Points>& train_by_strategy, const std::vector<Points>& test_by_strategy,
                std::uint64_t seed = 0, double reg = 1e-6);
double coverage_with(const std::vector<PrototypeModel>& strategy_models, const std::vector<Points>& test_by_strategy);

/// Rank-statistic AUC of in- vs out-of-distribution scores (higher = in), ties count 0.5.
double outlier_auc(const std::vector<double>& in_scores, const std::vector<double>& out_scores);

/// Per class: held-out class samples vs held-out samples of the other classes,
/// scored by the class log-likelihood. Averaged over classes.
Estimate outlier_detection(const std::vector<Points>& train_by_class, const std::vector<Points>& holdout_by_class,
                           const GmmOptions& options);

struct ClusteringData {
  std::vector<Points> train_by_strategy;
  std::vector<Points> holdout_by_strategy;
  Points outliers;
};

struct ClusteringRow {
  AssignmentRegime regime = AssignmentRegime::gmm_loglik;
  double coverage = 0.0;
  double outlier_auc = 0.0;
  std::vector<std::size_t> holdout_assignment;  // strategy label per held-out point, in strategy order
};

/// Unsupervised k-prototype fit on the pooled training points, compared under
/// Euclidean assignment to k-means centroids, Euclidean assignment to GMM means
/// and GMM log-likelihood. Clusters are matched to strategies by Hungarian
/// matching on the training split.
std::vector<ClusteringRow> compare_clusterings(const ClusteringData& data, std::size_t k, std::uint64_t seed,
                                               double reg = 1e-6);

}  // namespace pcx
