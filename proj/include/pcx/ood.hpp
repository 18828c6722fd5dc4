#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string_view>
#include <vector>

#include "pcx/attribution.hpp"
#include "pcx/network.hpp"
#include "pcx/prototype.hpp"

namespace pcx {

// All scores are oriented so that higher means more in-distribution.

double score_msp(const Vector& logits);
/// Negative energy, T * log sum_k exp(y_k / T).
double score_energy(const Vector& logits, double temperature = 1.0);

/// Class means with a single covariance shared by all classes.
struct TiedGaussian {
  Points class_means;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cholesky;
};

TiedGaussian fit_tied_gaussian(const std::vector<Points>& features_by_class, double reg = 1e-6);
/// max over classes of -sqrt(d^T Sigma^-1 d).
double score_mahalanobis_baseline(const Vector& features, const TiedGaussian& stats);

/// Class log-likelihood of the predicted class's mixture.
double score_pcx_gmm(const std::vector<PrototypeModel>& models, std::size_t predicted_class, const Vector& v);
/// Negative Euclidean distance to the closest prototype of the predicted class.
double score_pcx_e(const std::vector<PrototypeModel>& models, std::size_t predicted_class, const Vector& v);

enum class OodKind { msp, energy, mahalanobis_baseline, pcx_gmm, pcx_e };
std::string_view to_string(OodKind kind);
OodKind parse_ood_kind(std::string_view name);

struct OodScorer {
  OodKind kind = OodKind::pcx_gmm;
  double temperature = 1.0;
  std::size_t layer_index = 0;
  AttributionMethod method = AttributionMethod::lrp_epsilon;
  double epsilon = kDefaultEpsilon;
  std::vector<PrototypeModel> models;  // pcx-gmm, pcx-e
  std::optional<TiedGaussian> tied;    // mahalanobis-baseline

  /// Runs `input` through `net` and scores it. PCX kinds attribute the argmax
  /// class; a sample whose concept vector is all zero scores -infinity.
  double score(const NetworkSpec& net, const Tensor& input) const;
};

/// Sum-pooled activations at `layer_index` (the Mahalanobis baseline's features).
Vector pooled_features(const NetworkSpec& net, const Tensor& input, std::size_t layer_index);
std::size_t predicted_class(const Tensor& logits);

struct OodResult {
  double auc = 0.0;
  std::vector<double> in_scores;
  std::vector<double> out_scores;
};

OodResult run_ood_benchmark(const NetworkSpec& net, const OodScorer& scorer, const std::vector<Tensor>& in_samples,
                            const std::vector<Tensor>& out_samples, std::size_t threads = 1);

}  // namespace pcx
