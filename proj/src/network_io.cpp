#include <json.hpp>

#include "pcx/error.hpp"
#include "pcx/network.hpp"

namespace pcx {

using nlohmann::json;

NetworkSpec load_network(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": invalid network JSON: " + e.what());
  }
  const auto base = path.parent_path();
  try {
    Shape input_shape = doc.at("input_shape").get<Shape>();
    auto class_count = doc.at("class_count").get<std::size_t>();
    std::vector<LayerSpec> layers;
    for (const auto& jl : doc.at("layers")) {
      LayerSpec layer;
      layer.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      if (jl.contains("weights")) layer.weights = read_tensor(base / jl["weights"].get<std::string>());
      if (jl.contains("bias")) layer.bias = read_tensor(base / jl["bias"].get<std::string>());
      layer.kernel = jl.value("kernel", std::size_t{0});
      layer.stride = jl.value("stride", layer.kind == LayerKind::maxpool2d || layer.kind == LayerKind::avgpool2d
                                            ? layer.kernel
                                            : std::size_t{1});
      layer.padding = jl.value("padding", std::size_t{0});
      layers.push_back(std::move(layer));
    }
    return NetworkSpec(std::move(input_shape), class_count, std::move(layers));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_network(const std::filesystem::path& path, const NetworkSpec& net) {
  const auto base = path.parent_path();
  const auto stem = path.stem().string();
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& layer = net.layer(l);
    json jl{{"kind", to_string(layer.kind)}};
    if (layer.weights) {
      auto name = stem + "_l" + std::to_string(l) + "_w.pcxt";
      write_tensor(base / name, *layer.weights);
      jl["weights"] = name;
    }
    if (layer.bias) {
      auto name = stem + "_l" + std::to_string(l) + "_b.pcxt";
      write_tensor(base / name, *layer.bias);
      jl["bias"] = name;
    }
    if (layer.kind == LayerKind::maxpool2d || layer.kind == LayerKind::avgpool2d) jl["kernel"] = layer.kernel;
    if (layer.kind != LayerKind::relu && layer.kind != LayerKind::flatten && layer.kind != LayerKind::dense) {
      jl["stride"] = layer.stride;
      jl["padding"] = layer.padding;
    }
    layers.push_back(std::move(jl));
  }
  json doc{{"format", "pcx-network"},
           {"version", 1},
           {"input_shape", net.input_shape()},
           {"class_count", net.class_count()},
           {"layers", std::move(layers)}};
  write_text_atomic(path, doc.dump(2) + "\n");
}

}  // namespace pcx
