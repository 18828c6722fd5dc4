#pragma once

#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcx/prototype.hpp"

namespace pcx {

/// Result of checking one prediction against the prototypes of a class.
struct ValidationReport {
  std::string sample_id;
  std::size_t predicted_class = 0;
  std::size_t reference_class = 0;  // differs from predicted_class for counterfactual reports
  double log_likelihood = 0.0;
  double percentile = 0.0;  // rank among the reference class's training log-likelihoods
  double threshold_percentile = 5.0;
  double threshold_value = 0.0;
  bool outlier = false;
  Assignment assigned;            // best prototype over all classes
  std::size_t nearest_component = 0;  // best component of the reference class
  double mahalanobis = 0.0;
  double euclidean = 0.0;
  Vector concepts;
  std::vector<std::pair<std::size_t, double>> top_sample;
  std::vector<std::pair<std::size_t, double>> top_prototype;
  DeltaExplanation delta;
};

nlohmann::json to_json(const ValidationReport& report);
std::string render_validation(const ValidationReport& report);

/// Builds the report for concept vector `v`; `reference_class` selects which
/// class's prototypes the sample is compared with.
ValidationReport validate_vector(const std::vector<PrototypeModel>& models, const Vector& v, std::size_t predicted_class,
                                 std::size_t reference_class, std::size_t top_n, double threshold_percentile,
                                 double similar_band);

/// Runs the command line `args` (without the program name). Returns the exit
/// code: 0 success, 2 input error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pcx
