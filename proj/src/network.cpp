#include "pcx/network.hpp"

#include <algorithm>
#include <limits>

#include "pcx/error.hpp"

namespace pcx {

namespace {

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

[[noreturn]] void layer_error(std::size_t l, const std::string& what) {
  throw InputError("layer " + std::to_string(l) + ": " + what);
}

Shape infer_output_shape(std::size_t l, const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::dense: {
      if (!layer.weights || layer.weights->rank() != 2) layer_error(l, "dense layer needs [out, in] weights");
      const auto& w = *layer.weights;
      if (in.size() != 1 || in[0] != w.dim(1))
        layer_error(l, "dense layer expects input [" + std::to_string(w.dim(1)) + "], got " + shape_str(in));
      if (layer.bias && layer.bias->shape() != Shape{w.dim(0)})
        layer_error(l, "dense bias shape " + shape_str(layer.bias->shape()) + " does not match " +
                           std::to_string(w.dim(0)) + " outputs");
      return {w.dim(0)};
    }
    case LayerKind::conv2d: {
      if (!layer.weights || layer.weights->rank() != 4) layer_error(l, "conv2d layer needs [out, in, kh, kw] weights");
      if (layer.stride < 1) layer_error(l, "stride must be >= 1");
      const auto& w = *layer.weights;
      if (in.size() != 3 || in[0] != w.dim(1))
        layer_error(l, "conv2d expects " + std::to_string(w.dim(1)) + " input channels, got " + shape_str(in));
      if (layer.bias && layer.bias->shape() != Shape{w.dim(0)}) layer_error(l, "conv2d bias shape mismatch");
      auto h = pooled_extent(in[1], w.dim(2), layer.stride, layer.padding);
      auto ww = pooled_extent(in[2], w.dim(3), layer.stride, layer.padding);
      if (h == 0 || ww == 0) layer_error(l, "conv2d kernel larger than padded input " + shape_str(in));
      return {w.dim(0), h, ww};
    }
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: {
      if (in.size() != 3) layer_error(l, "pooling expects [C,H,W] input, got " + shape_str(in));
      if (layer.kernel < 1 || layer.stride < 1) layer_error(l, "pooling kernel and stride must be >= 1");
      if (2 * layer.padding > layer.kernel) layer_error(l, "pooling padding must be at most half the kernel");
      auto h = pooled_extent(in[1], layer.kernel, layer.stride, layer.padding);
      auto w = pooled_extent(in[2], layer.kernel, layer.stride, layer.padding);
      if (h == 0 || w == 0) layer_error(l, "pooling window larger than padded input " + shape_str(in));
      return {in[0], h, w};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::flatten:
      return {shape_numel(in)};
  }
  layer_error(l, "unknown layer kind");
}

void check_layer_index(const NetworkSpec& net, std::size_t l) {
  if (l >= net.layer_count())
    throw InputError("layer index " + std::to_string(l) + " out of range (network has " +
                     std::to_string(net.layer_count()) + " layers)");
}

Tensor apply_layer(const LayerSpec& layer, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  switch (layer.kind) {
    case LayerKind::dense: {
      const auto& w = *layer.weights;
      const std::size_t n_in = w.dim(1);
      for (std::size_t j = 0; j < w.dim(0); ++j) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < n_in; ++i) acc += w[j * n_in + i] * in[i];
        if (layer.bias) acc += (*layer.bias)[j];
        out[j] = acc;
      }
      break;
    }
    case LayerKind::conv2d: {
      const auto& w = *layer.weights;
      const std::size_t c_in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
      const std::size_t h_in = in.dim(1), w_in = in.dim(2);
      const std::size_t h_out = out_shape[1], w_out = out_shape[2];
      for (std::size_t o = 0; o < out_shape[0]; ++o)
        for (std::size_t p = 0; p < h_out; ++p)
          for (std::size_t q = 0; q < w_out; ++q) {
            float acc = 0.0f;
            for (std::size_t c = 0; c < c_in; ++c)
              for (std::size_t u = 0; u < kh; ++u) {
                const auto y = static_cast<std::ptrdiff_t>(p * layer.stride + u) - static_cast<std::ptrdiff_t>(layer.padding);
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(h_in)) continue;
                for (std::size_t v = 0; v < kw; ++v) {
                  const auto x = static_cast<std::ptrdiff_t>(q * layer.stride + v) - static_cast<std::ptrdiff_t>(layer.padding);
                  if (x < 0 || x >= static_cast<std::ptrdiff_t>(w_in)) continue;
                  acc += w[((o * c_in + c) * kh + u) * kw + v] * in[(c * h_in + static_cast<std::size_t>(y)) * w_in + static_cast<std::size_t>(x)];
                }
              }
            if (layer.bias) acc += (*layer.bias)[o];
            out[(o * h_out + p) * w_out + q] = acc;
          }
      break;
    }
    case LayerKind::relu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
      break;
    case LayerKind::maxpool2d: {
      auto arg = maxpool_argmax(layer, in, out_shape);
      for (std::size_t o = 0; o < arg.size(); ++o) out[o] = in[arg[o]];
      break;
    }
    case LayerKind::avgpool2d: {
      const float area = static_cast<float>(layer.kernel * layer.kernel);
      std::vector<float> acc(out.size(), 0.0f);
      for_each_pool_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i) { acc[o] += in[i]; });
      for (std::size_t o = 0; o < acc.size(); ++o) out[o] = acc[o] / area;
      break;
    }
    case LayerKind::flatten:
      std::copy(in.data().begin(), in.data().end(), out.data().begin());
      break;
  }
  return out;
}

// Maps an upstream gradient on a layer's output to its input.
std::vector<double> backward_layer(const LayerSpec& layer, const Tensor& in, const Shape& out_shape,
                                   const std::vector<double>& g_out, ReluBackward relu_mode) {
  std::vector<double> g_in(in.size(), 0.0);
  switch (layer.kind) {
    case LayerKind::dense: {
      const auto& w = *layer.weights;
      const std::size_t n_in = w.dim(1);
      for (std::size_t j = 0; j < w.dim(0); ++j) {
        if (g_out[j] == 0.0) continue;
        for (std::size_t i = 0; i < n_in; ++i) g_in[i] += static_cast<double>(w[j * n_in + i]) * g_out[j];
      }
      break;
    }
    case LayerKind::conv2d: {
      const auto& w = *layer.weights;
      for_each_conv_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i, std::size_t k) {
        g_in[i] += static_cast<double>(w[k]) * g_out[o];
      });
      break;
    }
    case LayerKind::relu:
      for (std::size_t i = 0; i < in.size(); ++i) {
        double g = g_out[i];
        if (relu_mode == ReluBackward::guided && g < 0.0) g = 0.0;
        g_in[i] = in[i] > 0.0f ? g : 0.0;
      }
      break;
    case LayerKind::maxpool2d: {
      auto arg = maxpool_argmax(layer, in, out_shape);
      for (std::size_t o = 0; o < arg.size(); ++o) g_in[arg[o]] += g_out[o];
      break;
    }
    case LayerKind::avgpool2d: {
      const double area = static_cast<double>(layer.kernel * layer.kernel);
      for_each_pool_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i) { g_in[i] += g_out[o] / area; });
      break;
    }
    case LayerKind::flatten:
      g_in = g_out;
      break;
  }
  return g_in;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d, LayerKind::avgpool2d,
                 LayerKind::flatten})
    if (to_string(k) == name) return k;
  throw InputError("unknown layer kind '" + std::string(name) +
                   "' (expected dense, conv2d, relu, maxpool2d, avgpool2d or flatten)");
}

LayerSpec LayerSpec::dense(Tensor weights, std::optional<Tensor> bias) {
  return {LayerKind::dense, std::move(weights), std::move(bias), 0, 1, 0};
}
LayerSpec LayerSpec::conv2d(Tensor weights, std::optional<Tensor> bias, std::size_t stride, std::size_t padding) {
  return {LayerKind::conv2d, std::move(weights), std::move(bias), 0, stride, padding};
}
LayerSpec LayerSpec::relu() { return {LayerKind::relu, std::nullopt, std::nullopt, 0, 1, 0}; }
LayerSpec LayerSpec::maxpool2d(std::size_t kernel, std::size_t stride, std::size_t padding) {
  return {LayerKind::maxpool2d, std::nullopt, std::nullopt, kernel, stride ? stride : kernel, padding};
}
LayerSpec LayerSpec::avgpool2d(std::size_t kernel, std::size_t stride, std::size_t padding) {
  return {LayerKind::avgpool2d, std::nullopt, std::nullopt, kernel, stride ? stride : kernel, padding};
}
LayerSpec LayerSpec::flatten() { return {LayerKind::flatten, std::nullopt, std::nullopt, 0, 1, 0}; }

NetworkSpec::NetworkSpec(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), class_count_(class_count), layers_(std::move(layers)) {
  if (input_shape_.empty()) throw InputError("network input shape is empty");
  if (class_count_ == 0) throw InputError("class_count must be positive");
  if (layers_.empty()) throw InputError("network has no layers");
  shapes_.push_back(input_shape_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    for (const auto* t : {&layer.weights, &layer.bias})
      if (*t && !(*t)->all_finite()) layer_error(l, "non-finite parameter");
    shapes_.push_back(infer_output_shape(l, layer, shapes_.back()));
  }
  if (shapes_.back() != Shape{class_count_})
    throw InputError("final layer emits " + shape_str(shapes_.back()) + " but class_count is " +
                     std::to_string(class_count_));
}

std::size_t NetworkSpec::default_feature_layer() const {
  for (std::size_t l = layers_.size(); l-- > 0;)
    if (layers_[l].kind == LayerKind::conv2d) return l;
  if (layers_.size() < 2) throw InputError("network has no hidden layer to take features from");
  return layers_.size() - 2;
}

void for_each_conv_tap(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                       const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const auto& w = *layer.weights;
  const std::size_t c_in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const auto h_in = static_cast<std::ptrdiff_t>(in_shape[1]), w_in = static_cast<std::ptrdiff_t>(in_shape[2]);
  const std::size_t h_out = out_shape[1], w_out = out_shape[2];
  const auto pad = static_cast<std::ptrdiff_t>(layer.padding);
  for (std::size_t o = 0; o < out_shape[0]; ++o)
    for (std::size_t p = 0; p < h_out; ++p)
      for (std::size_t q = 0; q < w_out; ++q) {
        const std::size_t out_idx = (o * h_out + p) * w_out + q;
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t u = 0; u < kh; ++u) {
            const auto y = static_cast<std::ptrdiff_t>(p * layer.stride + u) - pad;
            if (y < 0 || y >= h_in) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const auto x = static_cast<std::ptrdiff_t>(q * layer.stride + v) - pad;
              if (x < 0 || x >= w_in) continue;
              fn(out_idx, (c * in_shape[1] + static_cast<std::size_t>(y)) * in_shape[2] + static_cast<std::size_t>(x),
                 ((o * c_in + c) * kh + u) * kw + v);
            }
          }
      }
}

void for_each_pool_tap(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                       const std::function<void(std::size_t, std::size_t)>& fn) {
  const auto h_in = static_cast<std::ptrdiff_t>(in_shape[1]), w_in = static_cast<std::ptrdiff_t>(in_shape[2]);
  const std::size_t h_out = out_shape[1], w_out = out_shape[2];
  const auto pad = static_cast<std::ptrdiff_t>(layer.padding);
  for (std::size_t c = 0; c < out_shape[0]; ++c)
    for (std::size_t p = 0; p < h_out; ++p)
      for (std::size_t q = 0; q < w_out; ++q) {
        const std::size_t out_idx = (c * h_out + p) * w_out + q;
        for (std::size_t u = 0; u < layer.kernel; ++u) {
          const auto y = static_cast<std::ptrdiff_t>(p * layer.stride + u) - pad;
          if (y < 0 || y >= h_in) continue;
          for (std::size_t v = 0; v < layer.kernel; ++v) {
            const auto x = static_cast<std::ptrdiff_t>(q * layer.stride + v) - pad;
            if (x < 0 || x >= w_in) continue;
            fn(out_idx, (c * in_shape[1] + static_cast<std::size_t>(y)) * in_shape[2] + static_cast<std::size_t>(x));
          }
        }
      }
}

std::vector<std::size_t> maxpool_argmax(const LayerSpec& layer, const Tensor& in, const Shape& out_shape) {
  const std::size_t n_out = shape_numel(out_shape);
  std::vector<std::size_t> arg(n_out, std::numeric_limits<std::size_t>::max());
  for_each_pool_tap(layer, in.shape(), out_shape, [&](std::size_t o, std::size_t i) {
    if (arg[o] == std::numeric_limits<std::size_t>::max() || in[i] > in[arg[o]]) arg[o] = i;
  });
  return arg;
}

ActivationTrace forward(const NetworkSpec& net, const Tensor& input) {
  if (input.shape() != net.input_shape())
    throw InputError("layer 0: input shape " + shape_str(input.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  ActivationTrace trace{input, {}};
  trace.outputs.reserve(net.layer_count());
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    trace.outputs.push_back(apply_layer(net.layer(l), trace.layer_input(l), net.output_shape(l)));
  return trace;
}

Tensor forward_from(const NetworkSpec& net, std::size_t layer_index, const Tensor& patched) {
  check_layer_index(net, layer_index);
  if (patched.shape() != net.output_shape(layer_index))
    throw InputError("layer " + std::to_string(layer_index) + ": patched shape " + shape_str(patched.shape()) +
                     " does not match layer output " + shape_str(net.output_shape(layer_index)));
  Tensor current = patched;
  for (std::size_t l = layer_index + 1; l < net.layer_count(); ++l)
    current = apply_layer(net.layer(l), current, net.output_shape(l));
  return current;
}

std::vector<double> backprop_gradient(const NetworkSpec& net, const ActivationTrace& trace, std::size_t layer_index,
                                      std::size_t class_index, ReluBackward relu_mode) {
  check_layer_index(net, layer_index);
  if (class_index >= net.class_count())
    throw InputError("class index " + std::to_string(class_index) + " out of range (" +
                     std::to_string(net.class_count()) + " classes)");
  std::vector<double> g(net.class_count(), 0.0);
  g[class_index] = 1.0;
  for (std::size_t l = net.layer_count() - 1; l > layer_index; --l)
    g = backward_layer(net.layer(l), trace.layer_input(l), net.output_shape(l), g, relu_mode);
  return g;
}

Tensor grad_wrt_layer(const NetworkSpec& net, const Tensor& input, std::size_t layer_index, std::size_t class_index) {
  auto trace = forward(net, input);
  auto g = backprop_gradient(net, trace, layer_index, class_index);
  std::vector<float> out(g.begin(), g.end());
  return Tensor(net.output_shape(layer_index), std::move(out));
}

}  // namespace pcx
