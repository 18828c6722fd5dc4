#include "pcx/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pcx/error.hpp"
#include "pcx/kmeans.hpp"

namespace pcx {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd to_eigen(const Vector& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())); }

void check_dimension(const PrototypeComponent& c, const Vector& v) {
  if (v.size() != c.dimension())
    throw InputError("concept vector has " + std::to_string(v.size()) + " entries but the prototype has " +
                     std::to_string(c.dimension()));
}

double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

double ridge_for(const MatrixXd& scatter, double reg, double floor_scale) {
  const double m = static_cast<double>(scatter.rows());
  return reg * std::max(scatter.trace() / m, floor_scale);
}

MatrixXd weighted_scatter(const Points& points, const std::vector<double>& resp, const Vector& mean, double total,
                          bool diagonal) {
  const auto m = static_cast<Index>(mean.size());
  MatrixXd s = MatrixXd::Zero(m, m);
  VectorXd mu = to_eigen(mean);
  for (std::size_t n = 0; n < points.size(); ++n) {
    if (resp[n] == 0.0) continue;
    VectorXd d = to_eigen(points[n]) - mu;
    s.noalias() += resp[n] * d * d.transpose();
  }
  s /= total;
  if (diagonal) s = MatrixXd(s.diagonal().asDiagonal());
  return 0.5 * (s + s.transpose());
}

struct EStep {
  std::vector<std::vector<double>> resp;  // [component][sample]
  double log_likelihood = 0.0;
};

EStep expectation(const Points& points, const std::vector<PrototypeComponent>& comps) {
  EStep e;
  e.resp.assign(comps.size(), std::vector<double>(points.size()));
  std::vector<double> terms(comps.size());
  for (std::size_t n = 0; n < points.size(); ++n) {
    for (std::size_t i = 0; i < comps.size(); ++i)
      terms[i] = std::log(comps[i].weight()) + comps[i].log_density(points[n]);
    const double lse = log_sum_exp(terms);
    e.log_likelihood += lse;
    for (std::size_t i = 0; i < comps.size(); ++i) e.resp[i][n] = std::exp(terms[i] - lse);
  }
  return e;
}

std::vector<std::size_t> closest_points(const Points& points, const std::vector<PrototypeComponent>& comps) {
  std::vector<std::size_t> out;
  for (const auto& c : comps) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < points.size(); ++n) {
      const double d = squared_distance(points[n], c.mean());
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

PrototypeComponent::PrototypeComponent(double weight, Vector mean, Eigen::MatrixXd covariance)
    : weight_(weight), mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto m = static_cast<Index>(mean_.size());
  if (m == 0) throw InputError("prototype has zero dimension");
  if (covariance_.rows() != m || covariance_.cols() != m)
    throw InputError("covariance is not " + std::to_string(m) + " x " + std::to_string(m));
  if (!(weight_ > 0.0)) throw InputError("prototype weight must be positive");
  Eigen::LLT<MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
  cholesky_ = llt.matrixL();
  log_det_ = 2.0 * cholesky_.diagonal().array().log().sum();
  if (!std::isfinite(log_det_)) throw NumericalError("covariance matrix is numerically singular");
}

double PrototypeComponent::mahalanobis_sq(const Vector& v) const {
  check_dimension(*this, v);
  VectorXd d = to_eigen(v) - to_eigen(mean_);
  cholesky_.triangularView<Eigen::Lower>().solveInPlace(d);
  return d.squaredNorm();
}

double PrototypeComponent::log_density(const Vector& v) const {
  const double m = static_cast<double>(mean_.size());
  return -0.5 * (m * std::log(2.0 * std::numbers::pi) + log_det_ + mahalanobis_sq(v));
}

Eigen::MatrixXd PrototypeComponent::precision() const {
  const auto m = static_cast<Index>(mean_.size());
  MatrixXd inv = MatrixXd::Identity(m, m);
  cholesky_.triangularView<Eigen::Lower>().solveInPlace(inv);
  cholesky_.triangularView<Eigen::Lower>().transpose().solveInPlace(inv);
  return 0.5 * (inv + inv.transpose());
}

PrototypeModel fit_gmm(const Points& points, const GmmOptions& options) {
  const std::size_t n = points.size(), k = options.components;
  if (k == 0) throw InputError("prototype count must be at least 1");
  if (n < k)
    throw InputError("cannot fit " + std::to_string(k) + " prototypes on " + std::to_string(n) + " samples");
  if (n < 2) throw InputError("at least 2 samples are needed to estimate a covariance");
  const std::size_t m = points.front().size();
  for (const auto& p : points)
    if (p.size() != m) throw InputError("concept vectors have inconsistent dimensions");
  if (!(options.reg > 0.0)) throw InputError("covariance ridge must be positive");

  PrototypeModel model;
  model.fit.seed = options.seed;
  model.fit.reg = options.reg;
  const auto dim = static_cast<Index>(m);

  if (std::all_of(points.begin(), points.end(), [&](const Vector& p) { return p == points.front(); })) {
    model.fit.degenerate = true;
    model.fit.converged = true;
    model.components.emplace_back(1.0, points.front(), options.reg * MatrixXd::Identity(dim, dim));
    model.closest_training_index = {0};
    model.training_log_likelihoods.assign(n, log_likelihood_class(model, points.front()));
    model.fit.log_likelihood_history = {model.training_log_likelihoods.front() * static_cast<double>(n)};
    return model;
  }

  const bool diagonal = n < 2 * m;
  model.fit.diagonal = diagonal;
  const Vector global_mean = mean_of(points);
  const double floor_scale =
      1e-3 * weighted_scatter(points, std::vector<double>(n, 1.0), global_mean, static_cast<double>(n), diagonal).trace() /
      static_cast<double>(m);

  auto init = kmeans(points, k, options.seed);
  std::vector<PrototypeComponent> comps;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> resp(n, 0.0);
    double count = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (init.labels[i] == c) {
        resp[i] = 1.0;
        count += 1.0;
      }
    MatrixXd cov = count > 0.0 ? weighted_scatter(points, resp, init.centroids[c], count, diagonal)
                               : MatrixXd(MatrixXd::Zero(dim, dim));
    cov += ridge_for(cov, options.reg, floor_scale) * MatrixXd::Identity(dim, dim);
    comps.emplace_back(std::max(count, 1.0) / static_cast<double>(n), init.centroids[c], std::move(cov));
  }
  double wsum = 0.0;
  for (auto& c : comps) wsum += c.weight();
  for (auto& c : comps) c.set_weight(c.weight() / wsum);

  auto e = expectation(points, comps);
  model.fit.log_likelihood_history.push_back(e.log_likelihood);
  for (model.fit.iterations = 1; model.fit.iterations <= options.max_iterations; ++model.fit.iterations) {
    std::vector<PrototypeComponent> next;
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (double r : e.resp[c]) nk += r;
      if (nk < 1e-10) {
        // Starved component: keep its shape, leave it a negligible weight.
        next.push_back(comps[c]);
        next.back().set_weight(1e-12);
        continue;
      }
      Vector mean(m, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < m; ++d) mean[d] += e.resp[c][i] * points[i][d];
      for (auto& v : mean) v /= nk;
      MatrixXd cov = weighted_scatter(points, e.resp[c], mean, nk, diagonal);
      cov += ridge_for(cov, options.reg, floor_scale) * MatrixXd::Identity(dim, dim);
      next.emplace_back(nk / static_cast<double>(n), std::move(mean), std::move(cov));
    }
    double total = 0.0;
    for (auto& c : next) total += c.weight();
    for (auto& c : next) c.set_weight(c.weight() / total);
    comps = std::move(next);

    const double previous = e.log_likelihood;
    e = expectation(points, comps);
    model.fit.log_likelihood_history.push_back(e.log_likelihood);
    if (e.log_likelihood - previous < options.tolerance * std::abs(previous)) {
      model.fit.converged = true;
      break;
    }
  }
  model.fit.iterations = std::min(model.fit.iterations, options.max_iterations);
  model.components = std::move(comps);
  model.closest_training_index = closest_points(points, model.components);
  model.training_log_likelihoods.reserve(n);
  for (const auto& p : points) model.training_log_likelihoods.push_back(log_likelihood_class(model, p));
  return model;
}

double log_likelihood_class(const PrototypeModel& model, const Vector& v) {
  if (model.components.empty()) throw InputError("prototype model has no components");
  std::vector<double> terms;
  terms.reserve(model.components.size());
  for (const auto& c : model.components) terms.push_back(std::log(c.weight()) + c.log_density(v));
  return log_sum_exp(terms);
}

Assignment assign_prototype(const std::vector<PrototypeModel>& models, const Vector& v, bool weighted) {
  if (models.empty()) throw InputError("no prototype models to assign against");
  std::optional<Assignment> best;
  for (const auto& model : models)
    for (std::size_t i = 0; i < model.components.size(); ++i) {
      const auto& c = model.components[i];
      const double score = c.log_density(v) + (weighted ? std::log(c.weight()) : 0.0);
      const Assignment cand{model.class_id, i, score};
      if (!best || score > best->score ||
          (score == best->score && std::pair(cand.class_id, cand.component) < std::pair(best->class_id, best->component)))
        best = cand;
    }
  return *best;
}

double mahalanobis(const PrototypeComponent& component, const Vector& v) {
  return std::sqrt(component.mahalanobis_sq(v));
}

double euclidean(const PrototypeComponent& component, const Vector& v) {
  check_dimension(component, v);
  return std::sqrt(squared_distance(v, component.mean()));
}

const char* to_string(ConceptUsage usage) {
  switch (usage) {
    case ConceptUsage::underused: return "underused";
    case ConceptUsage::similar: return "similar";
    case ConceptUsage::overused: return "overused";
  }
  return "?";
}

DeltaExplanation explain_delta(const PrototypeComponent& component, const Vector& v, double similar_band) {
  check_dimension(component, v);
  if (similar_band < 0.0) throw InputError("similar band must be non-negative");
  const std::size_t m = v.size();
  DeltaExplanation out;
  out.similar_band = similar_band;
  out.delta.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.delta[i] = v[i] - component.mean()[i];
    out.usage.push_back(out.delta[i] > similar_band    ? ConceptUsage::overused
                        : out.delta[i] < -similar_band ? ConceptUsage::underused
                                                       : ConceptUsage::similar);
  }
  const MatrixXd prec = component.precision();
  out.intra.resize(m);
  out.inter = MatrixXd::Zero(static_cast<Index>(m), static_cast<Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double term = out.delta[i] * prec(static_cast<Index>(i), static_cast<Index>(j)) * out.delta[j];
      if (i == j)
        out.intra[i] = term;
      else
        out.inter(static_cast<Index>(i), static_cast<Index>(j)) = term;
      out.total += term;
    }
  return out;
}

std::vector<Vector> class_similarity_matrix(const std::vector<PrototypeModel>& models, std::size_t component) {
  const std::size_t k = models.size();
  for (const auto& model : models) {
    if (component >= model.components.size())
      throw InputError("class " + std::to_string(model.class_id) + " has no prototype " + std::to_string(component));
    if (norm(model.components[component].mean()) == 0.0)
      throw NumericalError("class " + std::to_string(model.class_id) + " has a zero-norm prototype mean");
  }
  std::vector<Vector> sim(k, Vector(k, 1.0));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      sim[a][b] = sim[b][a] =
          cosine_similarity(models[a].components[component].mean(), models[b].components[component].mean());
  return sim;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("percentile of an empty list");
  if (p < 0.0 || p > 100.0) throw InputError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double percentile_rank(const std::vector<double>& reference, double value) {
  if (reference.empty()) throw InputError("percentile rank against an empty reference");
  double below = 0.0;
  for (double r : reference) below += r < value ? 1.0 : (r == value ? 0.5 : 0.0);
  return 100.0 * below / static_cast<double>(reference.size());
}

OutlierClusters outlier_clusters(const Points& points, const PrototypeModel& model, double percentile_value,
                                 std::size_t k, std::uint64_t seed) {
  if (percentile_value < 0.0 || percentile_value >= 100.0) throw InputError("percentile must lie in [0, 100)");
  if (k == 0) throw InputError("outlier cluster count must be at least 1");
  std::vector<double> ll;
  ll.reserve(points.size());
  for (const auto& p : points) ll.push_back(log_likelihood_class(model, p));
  OutlierClusters out;
  out.threshold = percentile(model.training_log_likelihoods.empty() ? ll : model.training_log_likelihoods, percentile_value);
  for (std::size_t i = 0; i < ll.size(); ++i)
    if (ll[i] < out.threshold) out.outliers.push_back(i);
  if (out.outliers.empty()) return out;

  Points selected;
  for (auto i : out.outliers) selected.push_back(points[i]);
  KMeansResult grouping;
  try {
    if (selected.size() < k) throw InputError("too few outliers");
    grouping = kmeans(selected, k, seed);
  } catch (const InputError&) {
    out.ungrouped = true;
    return out;
  }
  out.clusters.assign(k, {});
  for (std::size_t j = 0; j < selected.size(); ++j) out.clusters[grouping.labels[j]].push_back(out.outliers[j]);
  return out;
}

}  // namespace pcx
