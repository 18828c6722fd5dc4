#include "pcx/ood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcx/error.hpp"
#include "pcx/metrics.hpp"
#include "pcx/parallel.hpp"

namespace pcx {

namespace {

const PrototypeModel& model_for(const std::vector<PrototypeModel>& models, std::size_t cls) {
  for (const auto& m : models)
    if (m.class_id == cls) return m;
  throw InputError("no prototype model for class " + std::to_string(cls));
}

}  // namespace

double score_msp(const Vector& logits) {
  if (logits.size() < 2) throw InputError("MSP needs at least two logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double y : logits) z += std::exp(y - top);
  return 1.0 / z;
}

double score_energy(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) throw InputError("energy temperature must be positive");
  if (logits.empty()) throw InputError("energy score needs logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double y : logits) s += std::exp((y - top) / temperature);
  return top + temperature * std::log(s);
}

TiedGaussian fit_tied_gaussian(const std::vector<Points>& features_by_class, double reg) {
  if (features_by_class.empty()) throw InputError("tied Gaussian needs at least one class");
  TiedGaussian out;
  const std::size_t m = features_by_class.front().empty() ? 0 : features_by_class.front().front().size();
  if (m == 0) throw InputError("tied Gaussian needs non-empty features");
  const auto dim = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
  std::size_t total = 0;
  for (const auto& pts : features_by_class) {
    if (pts.empty()) throw InputError("tied Gaussian: a class has no samples");
    const Vector mu = mean_of(pts);
    for (const auto& p : pts) {
      Eigen::VectorXd d(dim);
      for (std::size_t i = 0; i < m; ++i) d(static_cast<Eigen::Index>(i)) = p[i] - mu[i];
      scatter.noalias() += d * d.transpose();
    }
    total += pts.size();
    out.class_means.push_back(mu);
  }
  scatter /= static_cast<double>(total);
  scatter += reg * std::max(scatter.trace() / static_cast<double>(m), 1e-12) * Eigen::MatrixXd::Identity(dim, dim);
  Eigen::LLT<Eigen::MatrixXd> llt(scatter);
  if (llt.info() != Eigen::Success) throw NumericalError("tied covariance is not positive definite");
  out.covariance = scatter;
  out.cholesky = llt.matrixL();
  return out;
}

double score_mahalanobis_baseline(const Vector& features, const TiedGaussian& stats) {
  if (stats.class_means.empty()) throw InputError("Mahalanobis baseline is not fitted");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& mu : stats.class_means) {
    if (mu.size() != features.size()) throw InputError("feature dimension mismatch");
    Eigen::VectorXd d(static_cast<Eigen::Index>(mu.size()));
    for (std::size_t i = 0; i < mu.size(); ++i) d(static_cast<Eigen::Index>(i)) = features[i] - mu[i];
    stats.cholesky.triangularView<Eigen::Lower>().solveInPlace(d);
    best = std::max(best, -d.norm());
  }
  return best;
}

double score_pcx_gmm(const std::vector<PrototypeModel>& models, std::size_t predicted, const Vector& v) {
  return log_likelihood_class(model_for(models, predicted), v);
}

double score_pcx_e(const std::vector<PrototypeModel>& models, std::size_t predicted, const Vector& v) {
  const auto& model = model_for(models, predicted);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : model.components) best = std::min(best, euclidean(c, v));
  return -best;
}

std::string_view to_string(OodKind kind) {
  switch (kind) {
    case OodKind::msp: return "msp";
    case OodKind::energy: return "energy";
    case OodKind::mahalanobis_baseline: return "mahalanobis-baseline";
    case OodKind::pcx_gmm: return "pcx-gmm";
    case OodKind::pcx_e: return "pcx-e";
  }
  return "?";
}

OodKind parse_ood_kind(std::string_view name) {
  for (auto k : {OodKind::msp, OodKind::energy, OodKind::mahalanobis_baseline, OodKind::pcx_gmm, OodKind::pcx_e})
    if (to_string(k) == name) return k;
  throw InputError("unknown scorer '" + std::string(name) +
                   "' (expected msp, energy, mahalanobis-baseline, pcx-gmm or pcx-e)");
}

std::size_t predicted_class(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

Vector pooled_features(const NetworkSpec& net, const Tensor& input, std::size_t layer_index) {
  if (layer_index >= net.layer_count()) throw InputError("feature layer out of range");
  return activation_pool(forward(net, input), layer_index, Pool::sum).values;
}

double OodScorer::score(const NetworkSpec& net, const Tensor& input) const {
  switch (kind) {
    case OodKind::msp:
    case OodKind::energy: {
      const auto trace = forward(net, input);
      const Vector logits(trace.logits().data().begin(), trace.logits().data().end());
      return kind == OodKind::msp ? score_msp(logits) : score_energy(logits, temperature);
    }
    case OodKind::mahalanobis_baseline:
      if (!tied) throw InputError("Mahalanobis baseline scorer has no fitted statistics");
      return score_mahalanobis_baseline(pooled_features(net, input, layer_index), *tied);
    case OodKind::pcx_gmm:
    case OodKind::pcx_e: {
      if (models.empty()) throw InputError("PCX scorer has no prototype models");
      const auto cls = predicted_class(forward(net, input).logits());
      ConceptVector v;
      try {
        v = normalize(attribute(net, input, method, cls, layer_index, epsilon));
      } catch (const NumericalError&) {
        return -std::numeric_limits<double>::infinity();
      }
      return kind == OodKind::pcx_gmm ? score_pcx_gmm(models, cls, v.values) : score_pcx_e(models, cls, v.values);
    }
  }
  throw InputError("unsupported scorer");
}

OodResult run_ood_benchmark(const NetworkSpec& net, const OodScorer& scorer, const std::vector<Tensor>& in_samples,
                            const std::vector<Tensor>& out_samples, std::size_t threads) {
  if (in_samples.empty() || out_samples.empty()) throw InputError("OOD benchmark needs in and out samples");
  OodResult res;
  res.in_scores.resize(in_samples.size());
  res.out_scores.resize(out_samples.size());
  parallel_for(in_samples.size(), threads, [&](std::size_t i) { res.in_scores[i] = scorer.score(net, in_samples[i]); });
  parallel_for(out_samples.size(), threads,
               [&](std::size_t i) { res.out_scores[i] = scorer.score(net, out_samples[i]); });
  res.auc = outlier_auc(res.in_scores, res.out_scores);
  return res;
}

}  // namespace pcx
