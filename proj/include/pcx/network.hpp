#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/tensor.hpp"

namespace pcx {

enum class LayerKind { dense, conv2d, relu, maxpool2d, avgpool2d, flatten };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One layer. Dense weights are [out, in]; conv2d weights are [out, in, kh, kw].
/// Pool layers use a square `kernel`; conv kernels come from the weight shape.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec dense(Tensor weights, std::optional<Tensor> bias = std::nullopt);
  static LayerSpec conv2d(Tensor weights, std::optional<Tensor> bias = std::nullopt, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec relu();
  static LayerSpec maxpool2d(std::size_t kernel, std::size_t stride = 0, std::size_t padding = 0);
  static LayerSpec avgpool2d(std::size_t kernel, std::size_t stride = 0, std::size_t padding = 0);
  static LayerSpec flatten();

  bool is_linear() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

/// Immutable, validated feedforward network. Construction checks that
/// consecutive layer shapes compose and that the final layer emits
/// `class_count` logits.
class NetworkSpec {
 public:
  NetworkSpec(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t class_count() const { return class_count_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  /// Output shape of layer l.
  const Shape& output_shape(std::size_t l) const { return shapes_.at(l + 1); }
  /// Input shape of layer l (the network input for l = 0).
  const Shape& layer_input_shape(std::size_t l) const { return shapes_.at(l); }

  /// Number of concepts (channels, or units for vector layers) at the output of layer l.
  std::size_t channel_count(std::size_t l) const { return output_shape(l).front(); }

  /// Index of the last conv2d layer, or the input of the final layer when the
  /// network has no convolutions.
  std::size_t default_feature_layer() const;

 private:
  Shape input_shape_;
  std::size_t class_count_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;  // shapes_[0] = input, shapes_[l + 1] = output of layer l
};

/// Per-layer outputs for one sample; entry l is the output of layer l and the
/// last entry holds the logits.
struct ActivationTrace {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& logits() const { return outputs.back(); }
  /// Input to layer l.
  const Tensor& layer_input(std::size_t l) const { return l == 0 ? input : outputs[l - 1]; }
};

ActivationTrace forward(const NetworkSpec& net, const Tensor& input);

/// Runs layers layer_index+1 .. L on `patched`, which replaces the output of layer_index.
Tensor forward_from(const NetworkSpec& net, std::size_t layer_index, const Tensor& patched);

/// Gradient of logit `class_index` w.r.t. the output of layer `layer_index`.
Tensor grad_wrt_layer(const NetworkSpec& net, const Tensor& input, std::size_t layer_index, std::size_t class_index);

enum class ReluBackward {
  standard,
  guided,  // negative upstream gradient is clamped to zero before the ReLU mask
};

/// Double-precision backward pass from logit `class_index` down to the output
/// of `layer_index`. Returns a flat buffer shaped like that output.
std::vector<double> backprop_gradient(const NetworkSpec& net, const ActivationTrace& trace, std::size_t layer_index,
                                      std::size_t class_index, ReluBackward relu_mode = ReluBackward::standard);

/// Visits every (output, input, weight) flat-index triple of a conv2d layer in
/// a fixed order. Padding taps are skipped.
void for_each_conv_tap(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                       const std::function<void(std::size_t out, std::size_t in, std::size_t w)>& fn);

/// Visits the in-bounds input indices of each pooling window.
void for_each_pool_tap(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                       const std::function<void(std::size_t out, std::size_t in)>& fn);

/// Flat input index selected by max-pool window `out` (first maximum in row-major order).
std::vector<std::size_t> maxpool_argmax(const LayerSpec& layer, const Tensor& in, const Shape& out_shape);

// JSON network document with weight tensors referenced by relative path.
NetworkSpec load_network(const std::filesystem::path& path);
void save_network(const std::filesystem::path& path, const NetworkSpec& net);

}  // namespace pcx
