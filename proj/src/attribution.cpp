#include "pcx/attribution.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcx/error.hpp"

namespace pcx {

namespace {

struct LrpOptions {
  bool composite = false;
  double epsilon = kDefaultEpsilon;
};

// sign(0) = 1, so the stabilizer never cancels a zero denominator.
double stabilize(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

std::vector<double> lrp_epsilon_conv(const LayerSpec& layer, const Tensor& in, const Shape& out_shape,
                                     const std::vector<double>& r_out, double eps) {
  const auto& w = *layer.weights;
  std::vector<double> z(r_out.size(), 0.0);
  for_each_conv_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i, std::size_t k) {
    z[o] += static_cast<double>(in[i]) * static_cast<double>(w[k]);
  });
  std::vector<double> s(r_out.size());
  for (std::size_t o = 0; o < s.size(); ++o) s[o] = r_out[o] / stabilize(z[o], eps);
  std::vector<double> c(in.size(), 0.0);
  for_each_conv_tap(layer, in.shape(), out_shape,
                    [&](std::size_t o, std::size_t i, std::size_t k) { c[i] += static_cast<double>(w[k]) * s[o]; });
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= static_cast<double>(in[i]);
  return c;
}

std::vector<double> lrp_zplus_conv(const LayerSpec& layer, const Tensor& in, const Shape& out_shape,
                                   const std::vector<double>& r_out) {
  const auto& w = *layer.weights;
  std::vector<double> zp(r_out.size(), 0.0);
  for_each_conv_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i, std::size_t k) {
    zp[o] += std::max(0.0, static_cast<double>(in[i]) * static_cast<double>(w[k]));
  });
  std::vector<double> r_in(in.size(), 0.0);
  for_each_conv_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i, std::size_t k) {
    if (zp[o] <= 0.0) return;
    const double contrib = static_cast<double>(in[i]) * static_cast<double>(w[k]);
    if (contrib > 0.0) r_in[i] += contrib / zp[o] * r_out[o];
  });
  return r_in;
}

// Redistributes relevance on a layer's output onto its input. Bias terms are
// not part of the denominators, so their share is absorbed.
std::vector<double> lrp_layer(const LayerSpec& layer, const Tensor& in, const Shape& out_shape,
                              const std::vector<double>& r_out, const LrpOptions& opt) {
  switch (layer.kind) {
    case LayerKind::dense: {
      const auto& w = *layer.weights;
      const std::size_t n_in = w.dim(1), n_out = w.dim(0);
      std::vector<double> c(n_in, 0.0);
      for (std::size_t j = 0; j < n_out; ++j) {
        if (r_out[j] == 0.0) continue;
        double z = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) z += static_cast<double>(in[i]) * static_cast<double>(w[j * n_in + i]);
        const double s = r_out[j] / stabilize(z, opt.epsilon);
        for (std::size_t i = 0; i < n_in; ++i) c[i] += static_cast<double>(w[j * n_in + i]) * s;
      }
      for (std::size_t i = 0; i < n_in; ++i) c[i] *= static_cast<double>(in[i]);
      return c;
    }
    case LayerKind::conv2d:
      return opt.composite ? lrp_zplus_conv(layer, in, out_shape, r_out)
                           : lrp_epsilon_conv(layer, in, out_shape, r_out, opt.epsilon);
    case LayerKind::avgpool2d: {
      std::vector<double> z(r_out.size(), 0.0);
      for_each_pool_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i) { z[o] += in[i]; });
      std::vector<double> r_in(in.size(), 0.0);
      for_each_pool_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i) {
        r_in[i] += static_cast<double>(in[i]) * r_out[o] / stabilize(z[o], opt.epsilon);
      });
      return r_in;
    }
    case LayerKind::maxpool2d: {
      auto arg = maxpool_argmax(layer, in, out_shape);
      std::vector<double> r_in(in.size(), 0.0);
      for (std::size_t o = 0; o < arg.size(); ++o) r_in[arg[o]] += r_out[o];
      return r_in;
    }
    case LayerKind::relu:
    case LayerKind::flatten:
      return r_out;
  }
  return r_out;
}

void check_class(const NetworkSpec& net, std::size_t class_index) {
  if (class_index >= net.class_count())
    throw InputError("class index " + std::to_string(class_index) + " out of range (" +
                     std::to_string(net.class_count()) + " classes)");
}

void check_layer(const NetworkSpec& net, std::size_t layer_index) {
  if (layer_index >= net.layer_count())
    throw InputError("layer index " + std::to_string(layer_index) + " out of range (network has " +
                     std::to_string(net.layer_count()) + " layers)");
}

// Relevance at the output of `layer_index`, starting from the logit of `class_index`.
std::vector<double> relevance_at(const NetworkSpec& net, const ActivationTrace& trace, std::size_t class_index,
                                 std::size_t layer_index, const LrpOptions& opt) {
  check_class(net, class_index);
  check_layer(net, layer_index);
  std::vector<double> r(net.class_count(), 0.0);
  r[class_index] = trace.logits()[class_index];
  for (std::size_t l = net.layer_count() - 1; l > layer_index; --l)
    r = lrp_layer(net.layer(l), trace.layer_input(l), net.output_shape(l), r, opt);
  return r;
}

// Continues an LRP pass from the output of `layer_index` down to the network input.
std::vector<double> relevance_to_input(const NetworkSpec& net, const ActivationTrace& trace, std::size_t layer_index,
                                       std::vector<double> r, const LrpOptions& opt) {
  for (std::size_t l = layer_index + 1; l-- > 0;)
    r = lrp_layer(net.layer(l), trace.layer_input(l), net.output_shape(l), r, opt);
  return r;
}

ConceptVector relevance_vector(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                               std::size_t layer_index, const LrpOptions& opt, AttributionMethod method) {
  if (!(opt.epsilon > 0.0)) throw InputError("epsilon must be positive");
  auto trace = forward(net, input);
  auto r = relevance_at(net, trace, class_index, layer_index, opt);
  return {aggregate_channels(net.output_shape(layer_index), r), layer_index, Flavor::relevance, method, false};
}

ConceptVector gradient_times_activation(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                                        std::size_t layer_index, ReluBackward mode, AttributionMethod method) {
  auto trace = forward(net, input);
  auto g = backprop_gradient(net, trace, layer_index, class_index, mode);
  const auto& a = trace.outputs[layer_index];
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= static_cast<double>(a[i]);
  return {aggregate_channels(a.shape(), g), layer_index, Flavor::relevance, method, false};
}

Tensor to_float_tensor(const Shape& shape, const std::vector<double>& flat) {
  return Tensor(shape, std::vector<float>(flat.begin(), flat.end()));
}

}  // namespace

std::string_view to_string(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::lrp_epsilon: return "lrp-eps";
    case AttributionMethod::lrp_composite: return "lrp-composite";
    case AttributionMethod::input_x_gradient: return "ixg";
    case AttributionMethod::guided_backprop: return "guided-backprop";
    case AttributionMethod::activation_max: return "activation-max";
    case AttributionMethod::activation_sum: return "activation-sum";
  }
  return "?";
}

AttributionMethod parse_method(std::string_view name) {
  for (auto m : {AttributionMethod::lrp_epsilon, AttributionMethod::lrp_composite, AttributionMethod::input_x_gradient,
                 AttributionMethod::guided_backprop, AttributionMethod::activation_max,
                 AttributionMethod::activation_sum})
    if (to_string(m) == name) return m;
  throw InputError("unknown attribution method '" + std::string(name) +
                   "' (expected lrp-eps, lrp-composite, ixg, guided-backprop, activation-max or activation-sum)");
}

std::string_view to_string(Flavor flavor) { return flavor == Flavor::relevance ? "relevance" : "activation"; }

Flavor flavor_of(AttributionMethod method) {
  return method == AttributionMethod::activation_max || method == AttributionMethod::activation_sum
             ? Flavor::activation
             : Flavor::relevance;
}

ConceptBasis ConceptBasis::matrix(Tensor directions) {
  if (directions.rank() != 2) throw InputError("concept basis must be an n x m matrix");
  const std::size_t n = directions.dim(0), m = directions.dim(1);
  for (std::size_t c = 0; c < m; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += static_cast<double>(directions[r * m + c]) * directions[r * m + c];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5)
      throw InputError("concept basis column " + std::to_string(c) + " is not unit-norm (norm " +
                       std::to_string(std::sqrt(s)) + ")");
  }
  ConceptBasis basis;
  basis.directions_ = std::move(directions);
  return basis;
}

Vector aggregate_channels(const Shape& shape, const std::vector<double>& flat) {
  if (shape.size() == 1) return Vector(flat.begin(), flat.end());
  const std::size_t channels = shape[0], spatial = shape_numel(shape) / channels;
  Vector out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t s = 0; s < spatial; ++s) out[c] += flat[c * spatial + s];
  return out;
}

ConceptVector lrp_epsilon(const NetworkSpec& net, const Tensor& input, std::size_t class_index, std::size_t layer_index,
                          double epsilon) {
  return relevance_vector(net, input, class_index, layer_index, {false, epsilon}, AttributionMethod::lrp_epsilon);
}

ConceptVector lrp_composite(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                            std::size_t layer_index, double epsilon) {
  return relevance_vector(net, input, class_index, layer_index, {true, epsilon}, AttributionMethod::lrp_composite);
}

ConceptVector input_x_gradient(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                               std::size_t layer_index) {
  return gradient_times_activation(net, input, class_index, layer_index, ReluBackward::standard,
                                   AttributionMethod::input_x_gradient);
}

ConceptVector guided_backprop(const NetworkSpec& net, const Tensor& input, std::size_t class_index,
                              std::size_t layer_index) {
  return gradient_times_activation(net, input, class_index, layer_index, ReluBackward::guided,
                                   AttributionMethod::guided_backprop);
}

ConceptVector activation_pool(const ActivationTrace& trace, std::size_t layer_index, Pool pool) {
  if (layer_index >= trace.outputs.size())
    throw InputError("layer index " + std::to_string(layer_index) + " out of range");
  const auto& a = trace.outputs[layer_index];
  const auto method = pool == Pool::max ? AttributionMethod::activation_max : AttributionMethod::activation_sum;
  if (a.rank() == 1) return {Vector(a.data().begin(), a.data().end()), layer_index, Flavor::activation, method, false};
  const std::size_t channels = a.dim(0), spatial = a.size() / channels;
  Vector out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = pool == Pool::max ? static_cast<double>(a[c * spatial]) : 0.0;
    for (std::size_t s = 0; s < spatial; ++s) {
      const double v = a[c * spatial + s];
      acc = pool == Pool::max ? std::max(acc, v) : acc + v;
    }
    out[c] = acc;
  }
  return {std::move(out), layer_index, Flavor::activation, method, false};
}

ConceptVector attribute(const NetworkSpec& net, const Tensor& input, AttributionMethod method,
                        std::size_t class_index, std::size_t layer_index, double epsilon) {
  switch (method) {
    case AttributionMethod::lrp_epsilon: return lrp_epsilon(net, input, class_index, layer_index, epsilon);
    case AttributionMethod::lrp_composite: return lrp_composite(net, input, class_index, layer_index, epsilon);
    case AttributionMethod::input_x_gradient: return input_x_gradient(net, input, class_index, layer_index);
    case AttributionMethod::guided_backprop: return guided_backprop(net, input, class_index, layer_index);
    case AttributionMethod::activation_max:
    case AttributionMethod::activation_sum: {
      check_layer(net, layer_index);
      return activation_pool(forward(net, input), layer_index,
                             method == AttributionMethod::activation_max ? Pool::max : Pool::sum);
    }
  }
  throw InputError("unsupported attribution method");
}

ConceptVector normalize(const ConceptVector& v) {
  double total = 0.0;
  for (double x : v.values) total += std::abs(x);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericalError("cannot normalize a concept vector with zero absolute sum");
  ConceptVector out = v;
  for (auto& x : out.values) x /= total;
  out.normalized = true;
  return out;
}

ConceptVector project_basis(const ConceptVector& v, const ConceptBasis& basis) {
  if (basis.is_identity()) return v;
  const auto& u = basis.directions();
  const std::size_t n = u.dim(0), m = u.dim(1);
  if (v.values.size() != n)
    throw InputError("concept vector has " + std::to_string(v.values.size()) + " entries but basis expects " +
                     std::to_string(n));
  Eigen::MatrixXd mat(n, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = u[r * m + c];

  // Sequential Gram-Schmidt names each column that lies in the span of the earlier ones.
  std::vector<Eigen::VectorXd> accepted;
  std::vector<std::size_t> deficient;
  for (std::size_t c = 0; c < m; ++c) {
    Eigen::VectorXd col = mat.col(static_cast<Eigen::Index>(c));
    for (const auto& q : accepted) col -= q.dot(col) * q;
    if (col.norm() < 1e-6)
      deficient.push_back(c);
    else
      accepted.push_back(col.normalized());
  }
  if (!deficient.empty()) {
    std::string names;
    for (auto c : deficient) names += (names.empty() ? "" : ", ") + std::to_string(c);
    throw NumericalError("concept basis is rank-deficient; dependent columns: " + names);
  }
  Eigen::VectorXd a(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) a(static_cast<Eigen::Index>(r)) = v.values[r];
  Eigen::VectorXd nu = mat.colPivHouseholderQr().solve(a);
  ConceptVector out = v;
  out.values.assign(nu.data(), nu.data() + nu.size());
  out.normalized = false;
  return out;
}

Heatmap lrp_heatmap(const NetworkSpec& net, const Tensor& input, std::size_t class_index, bool composite,
                    double epsilon) {
  const LrpOptions opt{composite, epsilon};
  auto trace = forward(net, input);
  const std::size_t top = net.layer_count() - 1;
  auto r = relevance_at(net, trace, class_index, top, opt);
  return {to_float_tensor(net.input_shape(), relevance_to_input(net, trace, top, std::move(r), opt)), std::nullopt};
}

Heatmap concept_heatmap(const NetworkSpec& net, const Tensor& input, std::size_t class_index, std::size_t layer_index,
                        std::size_t concept_index, bool composite, double epsilon) {
  const LrpOptions opt{composite, epsilon};
  check_layer(net, layer_index);
  const auto& shape = net.output_shape(layer_index);
  const std::size_t channels = shape.front();
  if (concept_index >= channels)
    throw InputError("concept index " + std::to_string(concept_index) + " out of range (layer " +
                     std::to_string(layer_index) + " has " + std::to_string(channels) + " concepts)");
  auto trace = forward(net, input);
  auto r = relevance_at(net, trace, class_index, layer_index, opt);
  const std::size_t spatial = r.size() / channels;
  for (std::size_t c = 0; c < channels; ++c)
    if (c != concept_index) std::fill_n(r.begin() + static_cast<std::ptrdiff_t>(c * spatial), spatial, 0.0);
  return {to_float_tensor(net.input_shape(), relevance_to_input(net, trace, layer_index, std::move(r), opt)),
          concept_index};
}

std::vector<std::size_t> relmax_select(const Points& relevance_matrix, std::size_t concept_index, std::size_t k) {
  if (relevance_matrix.empty()) throw InputError("relevance matrix is empty");
  if (k > relevance_matrix.size())
    throw InputError("requested " + std::to_string(k) + " reference samples but only " +
                     std::to_string(relevance_matrix.size()) + " exist");
  for (const auto& row : relevance_matrix)
    if (concept_index >= row.size()) throw InputError("concept index " + std::to_string(concept_index) + " out of range");
  std::vector<std::size_t> idx(relevance_matrix.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double va = relevance_matrix[a][concept_index], vb = relevance_matrix[b][concept_index];
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace pcx
