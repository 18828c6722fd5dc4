#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "../support/reference.hpp"
#include "pcx/attribution.hpp"
#include "pcx/error.hpp"

using namespace pcx;

namespace {

// relu -> dense(w): the relu output is the concept layer.
NetworkSpec linear_head(std::vector<float> w) {
  const std::size_t n = w.size();
  return NetworkSpec({n}, 1, {LayerSpec::relu(), LayerSpec::dense(Tensor({1, n}, std::move(w)))});
}

// relu over a [2,1,2] input, conv to one 1x1 output, flatten, dense [1].
NetworkSpec two_channel_conv(std::vector<float> kernel, float head = 1.0f) {
  return NetworkSpec({2, 1, 2}, 1,
                     {LayerSpec::relu(), LayerSpec::conv2d(Tensor({1, 2, 1, 2}, std::move(kernel))),
                      LayerSpec::flatten(), LayerSpec::dense(Tensor({1, 1}, {head}))});
}

void check_close(const Vector& got, const Vector& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

double abs_sum(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

}  // namespace

TEST_CASE("method identifiers round trip") {
  for (auto m : {AttributionMethod::lrp_epsilon, AttributionMethod::lrp_composite, AttributionMethod::input_x_gradient,
                 AttributionMethod::guided_backprop, AttributionMethod::activation_max, AttributionMethod::activation_sum})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("gradcam"), InputError);
  CHECK(flavor_of(AttributionMethod::activation_sum) == Flavor::activation);
  CHECK(flavor_of(AttributionMethod::lrp_epsilon) == Flavor::relevance);
}

TEST_CASE("epsilon rule on a single linear layer") {
  const auto v = lrp_epsilon(linear_head({1, -2}), Tensor::vector({3, 1}), 0, 0, 1e-9);
  CHECK(std::abs(v.values[0] - 3.0) <= 1e-6);
  CHECK(std::abs(v.values[1] + 2.0) <= 1e-6);
  CHECK_FALSE(v.normalized);
  CHECK(v.flavor == Flavor::relevance);
}

TEST_CASE("zero input yields zero relevance in a bias-free net") {
  std::mt19937_64 rng(1);
  const auto net = ref::random_mlp(rng, 3, 16);
  const auto v = lrp_epsilon(net, Tensor(net.input_shape()), 0, 1);
  for (double x : v.values) CHECK(x == 0.0);
}

TEST_CASE("epsilon rule conserves the logit on random bias-free nets") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto net = i % 2 ? ref::random_convnet(rng) : ref::random_mlp(rng, 4, 32);
    const auto x = ref::random_input(rng, net);
    const auto logits = ref::to_double(forward(net, x).logits());
    const auto k = ref::argmax(logits);
    for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
      const auto v = lrp_epsilon(net, x, k, l).values;
      CHECK(std::abs(std::accumulate(v.begin(), v.end(), 0.0) - logits[k]) <= 1e-4 * std::abs(logits[k]));
    }
  }
}

TEST_CASE("epsilon stabilizer treats sign(0) as positive") {
  // Zero pre-activation: relevance is z_ij / (0 + eps) * R_j with R_j = 0 here, so nothing is produced.
  const auto v = lrp_epsilon(linear_head({1, -1}), Tensor::vector({2, 2}), 0, 0, 1e-9);
  for (double x : v.values) CHECK(std::isfinite(x));
}

TEST_CASE("composite rule equals epsilon rule when nothing is negative") {
  const auto net = two_channel_conv({1.0f, 0.5f, 2.0f, 0.25f});
  const Tensor x({2, 1, 2}, {1, 2, 3, 4});
  check_close(lrp_composite(net, x, 0, 0).values, lrp_epsilon(net, x, 0, 0).values, 1e-5);
}

TEST_CASE("composite rule by hand on a mixed-sign kernel") {
  // z = 1*1 - 1*2 + 2*3 - 0.5*4 = 3; positive parts 1 and 6 carry 3/7 and 18/7.
  const auto net = two_channel_conv({1.0f, -1.0f, 2.0f, -0.5f});
  const Tensor x({2, 1, 2}, {1, 2, 3, 4});
  check_close(lrp_composite(net, x, 0, 0).values, {3.0 / 7.0, 18.0 / 7.0}, 1e-6);
  // The epsilon rule keeps the signed shares: (1 - 2) and (6 - 2).
  check_close(lrp_epsilon(net, x, 0, 0).values, {-1.0, 4.0}, 1e-6);
}

TEST_CASE("composite rule passes nothing through an all-negative neuron") {
  const auto net = two_channel_conv({-1.0f, -1.0f, -2.0f, -0.5f}, -1.0f);
  const Tensor x({2, 1, 2}, {1, 2, 3, 4});
  REQUIRE(forward(net, x).logits()[0] > 0.0f);
  for (double v : lrp_composite(net, x, 0, 0).values) CHECK(v == 0.0);
}

TEST_CASE("input times gradient on a linear head") {
  check_close(input_x_gradient(linear_head({1, -2}), Tensor::vector({3, 1}), 0, 0).values, {3.0, -2.0}, 1e-12);
}

TEST_CASE("input times gradient is zero on a gradient-dead channel") {
  const NetworkSpec net({2}, 1,
                        {LayerSpec::relu(), LayerSpec::dense(Tensor({2, 2}, {1, 0, 0, -1})), LayerSpec::relu(),
                         LayerSpec::dense(Tensor({1, 2}, {1, 1}))});
  const auto v = input_x_gradient(net, Tensor::vector({2, 3}), 0, 0).values;
  CHECK(v[0] == doctest::Approx(2.0));
  CHECK(v[1] == 0.0);
}

TEST_CASE("input times gradient equals the epsilon rule on bias-free relu nets") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto net = i % 2 ? ref::random_convnet(rng, false, i % 4 == 1) : ref::random_mlp(rng, 3, 32);
    const auto x = ref::random_input(rng, net);
    const auto k = ref::argmax(ref::to_double(forward(net, x).logits()));
    for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
      const auto a = lrp_epsilon(net, x, k, l).values, b = input_x_gradient(net, x, k, l).values;
      const double scale = ref::max_abs(b);
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-4 * std::max(scale, 1e-12));
    }
  }
}

TEST_CASE("guided backprop without relu layers equals input times gradient") {
  const NetworkSpec net({3}, 2,
                        {LayerSpec::dense(Tensor({3, 3}, {1, -2, 0.5f, 0, 1, -1, 2, 1, 1})),
                         LayerSpec::dense(Tensor({2, 3}, {1, -1, 2, -3, 1, 1}))});
  const auto x = Tensor::vector({0.5f, -1, 2});
  CHECK(guided_backprop(net, x, 0, 0).values == input_x_gradient(net, x, 0, 0).values);
}

TEST_CASE("guided backprop on an all-positive gradient path equals input times gradient") {
  const NetworkSpec net({2}, 1,
                        {LayerSpec::relu(), LayerSpec::dense(Tensor({2, 2}, {1, 0.5f, 0.5f, 1})), LayerSpec::relu(),
                         LayerSpec::dense(Tensor({1, 2}, {1, 2}))});
  const auto x = Tensor::vector({1, 2});
  CHECK(guided_backprop(net, x, 0, 0).values == input_x_gradient(net, x, 0, 0).values);
}

TEST_CASE("guided backprop clamps a negative top gradient") {
  // h = [1, 2], dy/dh = [1, -1]. Standard: W^T [1, -1] = [0, -1]. Guided: W^T [1, 0] = [1, 0].
  const NetworkSpec net({2}, 1,
                        {LayerSpec::relu(), LayerSpec::dense(Tensor({2, 2}, {1, 0, 1, 1})), LayerSpec::relu(),
                         LayerSpec::dense(Tensor({1, 2}, {1, -1}))});
  const auto x = Tensor::vector({1, 1});
  check_close(input_x_gradient(net, x, 0, 0).values, {0.0, -1.0}, 1e-12);
  check_close(guided_backprop(net, x, 0, 0).values, {1.0, 0.0}, 1e-12);
}

TEST_CASE("activation pooling") {
  const NetworkSpec net({1, 2, 2}, 1, {LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(Tensor({1, 4}, {1, 1, 1, 1}))});
  const auto trace = forward(net, Tensor({1, 2, 2}, {1, 3, 5, 7}));
  CHECK(activation_pool(trace, 0, Pool::sum).values == Vector{16.0});
  CHECK(activation_pool(trace, 0, Pool::max).values == Vector{7.0});
  CHECK(activation_pool(trace, 0, Pool::sum).flavor == Flavor::activation);

  const NetworkSpec vec({2}, 1, {LayerSpec::dense(Tensor({2, 2}, {1, 0, 0, 1})), LayerSpec::dense(Tensor({1, 2}, {1, 1}))});
  const auto t2 = forward(vec, Tensor::vector({2, -1}));
  CHECK(activation_pool(t2, 0, Pool::sum).values == Vector{2.0, -1.0});
  CHECK(activation_pool(t2, 0, Pool::max).values == Vector{2.0, -1.0});
}

TEST_CASE("normalized sum pool equals normalized mean pool") {
  std::mt19937_64 rng(4);
  const auto net = ref::random_convnet(rng);
  const auto trace = forward(net, ref::random_input(rng, net));
  const auto sum = activation_pool(trace, 1, Pool::sum);
  const auto& shape = net.output_shape(1);
  ConceptVector mean = sum;
  for (auto& v : mean.values) v /= static_cast<double>(shape[1] * shape[2]);
  const auto a = normalize(sum).values, b = normalize(mean).values;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-7);
}

TEST_CASE("normalize") {
  ConceptVector v;
  v.values = {3, -2};
  check_close(normalize(v).values, {0.6, -0.4}, 1e-15);
  CHECK(normalize(v).normalized);
  v.values = {0, 5};
  CHECK(normalize(v).values == Vector{0.0, 1.0});
  v.values = {0.25, -0.5, 0.25};
  CHECK(normalize(v).values == v.values);
  v.values = {0, 0};
  CHECK_THROWS_AS(normalize(v), NumericalError);
}

TEST_CASE("scaling the input scales relevance and leaves the normalized vector unchanged") {
  std::mt19937_64 rng(5);
  const auto net = ref::random_mlp(rng, 3, 16);
  const auto x = ref::random_input(rng, net);
  Tensor x3 = x;
  for (auto& v : x3.data()) v *= 4.0f;
  const auto k = ref::argmax(ref::to_double(forward(net, x).logits()));
  const auto a = lrp_epsilon(net, x, k, 1), b = lrp_epsilon(net, x3, k, 1);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(b.values[i] == doctest::Approx(4.0 * a.values[i]).epsilon(1e-5));
  const auto na = normalize(a).values, nb = normalize(b).values;
  for (std::size_t i = 0; i < na.size(); ++i) CHECK(std::abs(na[i] - nb[i]) <= 1e-6);
  CHECK(abs_sum(na) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("basis projection") {
  ConceptVector a;
  a.values = {1, 0};
  CHECK(project_basis(a, ConceptBasis::identity()).values == a.values);

  const auto rot = ConceptBasis::matrix(Tensor({2, 2}, {0, -1, 1, 0}));
  check_close(project_basis(a, rot).values, {0.0, -1.0}, 1e-12);

  // Orthonormal columns: reconstruction equals the activation.
  const float c = 0.6f, s = 0.8f;
  const auto basis = ConceptBasis::matrix(Tensor({3, 2}, {c, 0, s, 0, 0, 1}));
  ConceptVector v;
  v.values = {0.3, 0.4, -2};
  const auto nu = project_basis(v, basis).values;
  REQUIRE(nu.size() == 2);
  CHECK(nu[0] == doctest::Approx(c * 0.3 + s * 0.4).epsilon(1e-6));
  CHECK(nu[1] == doctest::Approx(-2.0).epsilon(1e-6));

  CHECK_THROWS_AS(ConceptBasis::matrix(Tensor({2, 2}, {2, 0, 0, 1})), InputError);
  try {
    project_basis(v, ConceptBasis::matrix(Tensor({3, 2}, {1, 1, 0, 0, 0, 0})));
    FAIL("expected a rank error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("dependent columns") != std::string::npos);
  }
}

TEST_CASE("concept heatmaps") {
  std::mt19937_64 rng(6);
  // Single-concept layer: masking removes nothing.
  const NetworkSpec one({3}, 2,
                        {LayerSpec::dense(ref::random_tensor(rng, {1, 3})), LayerSpec::relu(),
                         LayerSpec::dense(Tensor({2, 1}, {1, -1}))});
  const auto x = Tensor::vector({1, 2, 3});
  const auto full = lrp_heatmap(one, x, 0);
  CHECK(concept_heatmap(one, x, 0, 1, 0).values == full.values);
  CHECK(concept_heatmap(one, x, 0, 1, 0).concept_index == std::optional<std::size_t>(0));
  CHECK_THROWS_AS(concept_heatmap(one, x, 0, 1, 1), InputError);

  // A concept with zero relevance gives an all-zero heatmap.
  const NetworkSpec dead({2}, 1,
                         {LayerSpec::dense(Tensor({2, 2}, {1, 0, 0, 1})), LayerSpec::relu(),
                          LayerSpec::dense(Tensor({1, 2}, {1, 0}))});
  const auto zero = concept_heatmap(dead, Tensor::vector({1, 1}), 0, 1, 1);
  for (float v : zero.values.data()) CHECK(v == 0.0f);

  // Completeness.
  const auto net = ref::random_convnet(rng);
  const auto xi = ref::random_input(rng, net);
  const auto heat = lrp_heatmap(net, xi, 0, true).values;
  std::vector<double> sum(heat.size(), 0.0);
  for (std::size_t c = 0; c < net.channel_count(1); ++c) {
    const auto part = concept_heatmap(net, xi, 0, 1, c, true).values;
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += part[j];
  }
  const double scale = ref::max_abs(ref::to_double(heat));
  for (std::size_t j = 0; j < sum.size(); ++j) CHECK(std::abs(sum[j] - heat[j]) <= 1e-4 * scale);
}

TEST_CASE("relmax selection") {
  CHECK(relmax_select({{0.1}, {0.9}, {0.5}}, 0, 2) == std::vector<std::size_t>{1, 2});
  CHECK(relmax_select({{0.3}, {0.3}, {0.3}}, 0, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(relmax_select({}, 0, 1), InputError);

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> d(0, 9);
  Points m(50, Vector(8));
  for (auto& row : m)
    for (auto& v : row) v = d(rng) / 10.0;
  for (std::size_t c = 0; c < 8; ++c) {
    std::vector<std::size_t> idx(50);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m[a][c] > m[b][c]; });
    idx.resize(10);
    CHECK(relmax_select(m, c, 10) == idx);
  }
}
