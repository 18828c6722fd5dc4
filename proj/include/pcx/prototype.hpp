#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcx/points.hpp"

namespace pcx {

/// One Gaussian of a class mixture, with its Cholesky factor and log-determinant cached.
class PrototypeComponent {
 public:
  /// Factorizes `covariance`; throws NumericalError if it is not positive definite.
  PrototypeComponent(double weight, Vector mean, Eigen::MatrixXd covariance);

  double weight() const { return weight_; }
  const Vector& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  const Eigen::MatrixXd& cholesky() const { return cholesky_; }
  double log_det() const { return log_det_; }
  std::size_t dimension() const { return mean_.size(); }

  /// (v - mu)^T Sigma^-1 (v - mu) through the triangular factor.
  double mahalanobis_sq(const Vector& v) const;
  double log_density(const Vector& v) const;
  Eigen::MatrixXd precision() const;

  void set_weight(double w) { weight_ = w; }

 private:
  double weight_;
  Vector mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd cholesky_;
  double log_det_ = 0.0;
};

struct FitInfo {
  std::uint64_t seed = 0;
  double reg = 1e-6;
  std::size_t iterations = 0;
  bool converged = false;
  bool diagonal = false;    // samples < 2m forced a diagonal covariance
  bool degenerate = false;  // all points identical; single component with reg * I
  std::vector<double> log_likelihood_history;
};

struct PrototypeModel {
  std::size_t class_id = 0;
  std::size_t layer_index = 0;
  std::string method;
  std::vector<PrototypeComponent> components;
  std::vector<std::size_t> closest_training_index;
  FitInfo fit;
  /// Class log-likelihood of each training sample, in training order.
  std::vector<double> training_log_likelihoods;

  std::size_t dimension() const { return components.front().dimension(); }
};

struct GmmOptions {
  std::size_t components = 8;
  std::uint64_t seed = 0;
  double reg = 1e-6;
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;
};

/// EM with full covariances, initialized from k-means. Each M-step covariance
/// gets reg * (trace / m) * I added.
PrototypeModel fit_gmm(const Points& points, const GmmOptions& options);

/// log sum_i lambda_i N(v; mu_i, Sigma_i).
double log_likelihood_class(const PrototypeModel& model, const Vector& v);

struct Assignment {
  std::size_t class_id = 0;
  std::size_t component = 0;
  double score = 0.0;
};

/// argmax over (class, component) of log(lambda_i p_i(v)), or of log p_i(v)
/// when `weighted` is false. Ties go to the lowest (class, component).
Assignment assign_prototype(const std::vector<PrototypeModel>& models, const Vector& v, bool weighted = true);

double mahalanobis(const PrototypeComponent& component, const Vector& v);
double euclidean(const PrototypeComponent& component, const Vector& v);

enum class ConceptUsage { underused, similar, overused };
const char* to_string(ConceptUsage usage);

struct DeltaExplanation {
  Vector delta;
  std::vector<ConceptUsage> usage;
  double similar_band = 0.0;
  Vector intra;                 // delta_i (Sigma^-1)_ii delta_i
  Eigen::MatrixXd inter;        // delta_i (Sigma^-1)_ij delta_j, zero diagonal
  double total = 0.0;           // sum of intra and inter terms
};

DeltaExplanation explain_delta(const PrototypeComponent& component, const Vector& v, double similar_band);

/// Cosine similarity between the designated component mean of every pair of classes.
std::vector<Vector> class_similarity_matrix(const std::vector<PrototypeModel>& models, std::size_t component = 0);

/// Linear-interpolation percentile of `values`, p in [0, 100].
double percentile(std::vector<double> values, double p);
/// Percentage of `reference` below `value`, counting ties as half.
double percentile_rank(const std::vector<double>& reference, double value);

struct OutlierClusters {
  double threshold = 0.0;
  std::vector<std::size_t> outliers;              // ascending sample indices
  std::vector<std::vector<std::size_t>> clusters;  // empty when ungrouped
  bool ungrouped = false;                          // fewer outliers than k
};

/// Flags points whose class log-likelihood is below the given percentile of the
/// model's training log-likelihoods (of `points` when the model has none), then
/// groups them with k-means.
OutlierClusters outlier_clusters(const Points& points, const PrototypeModel& model, double percentile_value,
                                 std::size_t k, std::uint64_t seed);

}  // namespace pcx
