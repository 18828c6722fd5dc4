#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/network.hpp"
#include "pcx/points.hpp"

namespace pcx {

enum class AttributionMethod { lrp_epsilon, lrp_composite, input_x_gradient, guided_backprop, activation_max, activation_sum };
enum class Flavor { relevance, activation };
enum class Pool { max, sum };

/// CLI identifiers: lrp-eps, lrp-composite, ixg, guided-backprop, activation-max, activation-sum.
std::string_view to_string(AttributionMethod method);
AttributionMethod parse_method(std::string_view name);
std::string_view to_string(Flavor flavor);
Flavor flavor_of(AttributionMethod method);

inline constexpr double kDefaultEpsilon = 1e-9;

/// Per-sample concept attributions at one layer.
struct ConceptVector {
  Vector values;
  std::size_t layer_index = 0;
  Flavor flavor = Flavor::relevance;
  AttributionMethod method = AttributionMethod::lrp_epsilon;
  bool normalized = false;
};

/// Maps concepts to activation space. Identity assigns one concept per channel;
/// matrix mode holds unit-norm directions as the columns of an n x m tensor.
class ConceptBasis {
 public:
  static ConceptBasis identity() { return ConceptBasis(); }
  static ConceptBasis matrix(Tensor directions);

  bool is_identity() const { return !directions_; }
  const Tensor& directions() const { return *directions_; }

 private:
  ConceptBasis() = default;
  std::optional<Tensor> directions_;
};

struct Heatmap {
  Tensor values;  // shaped like the network input
  std::optional<std::size_t> concept_index;
};

ConceptVector lrp_epsilon(const NetworkSpec& net, const Tensor& input, std::size_t class_index, std::size_t layer_index,
                          double epsilon = kDefaultEpsilon);
/// z+ rule in conv layers, epsilon rule in dense and average-pool layers.
ConceptVector lrp_composite(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                            std::size_t layer_index, double epsilon = kDefaultEpsilon);
ConceptVector input_x_gradient(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                               std::size_t layer_index);
ConceptVector guided_backprop(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                              std::size_t layer_index);
ConceptVector activation_pool(const ActivationTrace& trace, std::size_t layer_index, Pool pool);

/// Unnormalized attribution with any method.
ConceptVector attribute(const NetworkSpec& net, const Tensor& input, AttributionMethod method,
                        std::size_t class_index, std::size_t layer_index, double epsilon = kDefaultEpsilon);

/// Scales to unit absolute sum. Throws NumericalError on an all-zero vector.
ConceptVector normalize(const ConceptVector& v);

/// Identity basis returns `v`; matrix basis solves min ||U nu - v|| for nu.
ConceptVector project_basis(const ConceptVector& v, const ConceptBasis& basis);

/// Per-channel sum of spatial entries (identity for vector layers).
Vector aggregate_channels(const Shape& shape, const std::vector<double>& flat);

/// LRP input heatmap of the full logit.
Heatmap lrp_heatmap(const NetworkSpec& net, const Tensor& input, std::size_t class_index, bool composite = false,
                    double epsilon = kDefaultEpsilon);
/// LRP input heatmap with relevance of every concept but `concept_index` zeroed at `layer_index`.
Heatmap concept_heatmap(const NetworkSpec& net, const Tensor& input, std::size_t class_index, std::size_t layer_index,
                        std::size_t concept_index, bool composite = false, double epsilon = kDefaultEpsilon);

/// Indices of the k samples with the largest value in column `concept_index`,
/// descending, lower sample index first on ties.
std::vector<std::size_t> relmax_select(const Points& relevance_matrix, std::size_t concept_index, std::size_t k);

}  // namespace pcx
