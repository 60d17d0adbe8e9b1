#include "ccnn/model.hpp"

#include <algorithm>
#include <random>

#include "ccnn/errors.hpp"
#include "json.hpp"

namespace ccnn {
namespace {

using json = nlohmann::json;

constexpr float kInitStd = 0.01f;

void check_spec(const ConvSpec& spec, const std::string& where) {
  if (spec.kernel_size == 0 || spec.kernel_size % 2 == 0) {
    throw ConfigError(where + ": kernel size must be odd, got " + std::to_string(spec.kernel_size));
  }
  if (spec.out_channels == 0) throw ConfigError(where + ": out_channels must be >= 1");
}

struct EagerOps {
  using Value = Tensor;
  const ModelParams& params;
  ComputeOptions opts;

  Value conv(const Value& x, std::size_t layer) { return conv2d_forward(x, params.layers[layer].layer, opts); }
  Value relu(const Value& x) { return relu_forward(x); }
  Value pool(const Value& x) { return maxpool2x2_forward(x); }
  Value concat(const std::vector<Value>& parts) { return concat_channels(parts); }
};

struct TapeOps {
  using Value = Var;
  GradTape& tape;
  const ModelParams& params;
  ModelGrads& grads;

  Value conv(Value x, std::size_t layer) {
    return tape.conv2d(x, params.layers[layer].layer, grads.layers[layer]);
  }
  Value relu(Value x) { return tape.relu(x); }
  Value pool(Value x) { return tape.maxpool2x2(x); }
  Value concat(const std::vector<Value>& parts) { return tape.concat(parts); }
};

template <class Ops>
typename Ops::Value run_network(Ops& ops, const CCNNConfig& config, typename Ops::Value x,
                                bool stop_after_fusion = false) {
  const std::size_t branches = config.front_branches.size();
  std::vector<typename Ops::Value> pooled;
  pooled.reserve(branches);
  for (std::size_t b = 0; b < branches; ++b) pooled.push_back(ops.pool(ops.relu(ops.conv(x, b))));
  auto h = ops.concat(pooled);
  if (stop_after_fusion) return h;

  const auto pools = config.active_backend_pools();
  for (std::size_t i = 0; i < config.backend.size(); ++i) {
    h = ops.relu(ops.conv(h, branches + i));
    if (pools.contains(i + 1)) h = ops.pool(h);
  }
  return h;
}

void check_images(const ModelParams& params, const CCNNConfig& config, const Shape& s) {
  config.validate();
  const auto expected = layer_shapes(config);
  bool congruent = params.layers.size() == expected.size();
  for (std::size_t i = 0; congruent && i < expected.size(); ++i) {
    const ConvLayer& a = params.layers[i].layer;
    const ConvLayer& b = expected[i];
    congruent = a.in_channels == b.in_channels && a.out_channels == b.out_channels &&
                a.kernel_h == b.kernel_h && a.kernel_w == b.kernel_w;
  }
  if (!congruent) throw InvalidArgument("forward: parameters do not match the model config");
  if (s.c != config.input_channels) {
    throw InvalidArgument("forward: image has " + std::to_string(s.c) + " channels, model expects " +
                          std::to_string(config.input_channels));
  }
  if (s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
    throw InvalidArgument("forward: image size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          " is not divisible by 8; crop the image to a multiple of 8 first");
  }
}

}  // namespace

void CCNNConfig::validate() const {
  if (input_channels == 0) throw ConfigError("config: input_channels must be >= 1");
  if (front_branches.empty()) throw ConfigError("config: at least one front branch is required");
  for (std::size_t i = 0; i < front_branches.size(); ++i) {
    check_spec(front_branches[i], "config: front branch " + std::to_string(i));
    if (i > 0 && front_branches[i].kernel_size > front_branches[i - 1].kernel_size) {
      throw ConfigError("config: front branches must be ordered by descending kernel size");
    }
  }
  if (backend.size() != kBackendDepth) {
    throw ConfigError("config: backend must have " + std::to_string(kBackendDepth) + " layers, got " +
                      std::to_string(backend.size()));
  }
  for (std::size_t i = 0; i < backend.size(); ++i) {
    check_spec(backend[i], "config: backend layer " + std::to_string(i + 1));
  }
  if (backend.back().kernel_size != 1 || backend.back().out_channels != 1) {
    throw ConfigError("config: last backend layer must be a 1x1 conv with 1 output channel, got (" +
                      std::to_string(backend.back().kernel_size) + ", " +
                      std::to_string(backend.back().out_channels) + ")");
  }
  for (std::size_t idx : pool_after_backend) {
    if (idx < 1 || idx >= backend.size()) {
      throw ConfigError("config: pool_after_backend index " + std::to_string(idx) +
                        " must lie in [1, " + std::to_string(backend.size() - 1) + "]");
    }
  }
}

std::set<std::size_t> CCNNConfig::active_backend_pools() const {
  std::set<std::size_t> pools = pool_after_backend;
  if (!include_last_pool && !pools.empty()) pools.erase(std::prev(pools.end()));
  return pools;
}

std::size_t CCNNConfig::downsampling_factor() const {
  return std::size_t{2} << active_backend_pools().size();
}

std::size_t CCNNConfig::fused_channels() const {
  std::size_t total = 0;
  for (const ConvSpec& b : front_branches) total += b.out_channels;
  return total;
}

std::string config_to_json(const CCNNConfig& config) {
  json j;
  auto specs = [](const std::vector<ConvSpec>& list) {
    json arr = json::array();
    for (const ConvSpec& s : list) arr.push_back({s.kernel_size, s.out_channels});
    return arr;
  };
  j["front_branches"] = specs(config.front_branches);
  j["backend"] = specs(config.backend);
  j["pool_after_backend"] = config.pool_after_backend;
  j["include_last_pool"] = config.include_last_pool;
  j["input_channels"] = config.input_channels;
  return j.dump();
}

CCNNConfig config_from_json(std::string_view text) {
  CCNNConfig config;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config JSON must be an object");
    auto specs = [](const json& arr) {
      std::vector<ConvSpec> out;
      for (const json& e : arr) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("config: layer entries are [kernel_size, out_channels]");
        out.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
      }
      return out;
    };
    if (j.contains("front_branches")) config.front_branches = specs(j.at("front_branches"));
    if (j.contains("backend")) config.backend = specs(j.at("backend"));
    if (j.contains("pool_after_backend")) {
      config.pool_after_backend = j.at("pool_after_backend").get<std::set<std::size_t>>();
    }
    if (j.contains("include_last_pool")) config.include_last_pool = j.at("include_last_pool").get<bool>();
    if (j.contains("input_channels")) config.input_channels = j.at("input_channels").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config JSON: ") + e.what());
  }
  config.validate();
  return config;
}

std::size_t ModelParams::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const NamedLayer& l : layers) total += l.layer.weights.size() + l.layer.bias.size();
  return total;
}

std::vector<float> ModelParams::flatten() const {
  std::vector<float> flat;
  flat.reserve(parameter_count());
  for (const NamedLayer& l : layers) {
    flat.insert(flat.end(), l.layer.weights.begin(), l.layer.weights.end());
    flat.insert(flat.end(), l.layer.bias.begin(), l.layer.bias.end());
  }
  return flat;
}

void ModelParams::assign(std::span<const float> flat) {
  if (flat.size() != parameter_count()) {
    throw InvalidArgument("assign: expected " + std::to_string(parameter_count()) + " values, got " +
                          std::to_string(flat.size()));
  }
  auto it = flat.begin();
  for (NamedLayer& l : layers) {
    std::copy_n(it, l.layer.weights.size(), l.layer.weights.begin());
    it += static_cast<std::ptrdiff_t>(l.layer.weights.size());
    std::copy_n(it, l.layer.bias.size(), l.layer.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.layer.bias.size());
  }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const ConvLayer& x = a.layers[i].layer;
    const ConvLayer& y = b.layers[i].layer;
    if (a.layers[i].name != b.layers[i].name || x.in_channels != y.in_channels ||
        x.out_channels != y.out_channels || x.kernel_h != y.kernel_h || x.kernel_w != y.kernel_w ||
        x.weights != y.weights || x.bias != y.bias) {
      return false;
    }
  }
  return true;
}

ModelGrads ModelGrads::like(const ModelParams& params) {
  ModelGrads g;
  for (const NamedLayer& l : params.layers) g.layers.push_back(ConvGrads::like(l.layer));
  return g;
}

void ModelGrads::zero() {
  for (ConvGrads& g : layers) g.zero();
}

std::vector<float> ModelGrads::flatten() const {
  std::vector<float> flat;
  for (const ConvGrads& g : layers) {
    flat.insert(flat.end(), g.weights.begin(), g.weights.end());
    flat.insert(flat.end(), g.bias.begin(), g.bias.end());
  }
  return flat;
}

std::vector<ConvLayer> layer_shapes(const CCNNConfig& config) {
  config.validate();
  std::vector<ConvLayer> layers;
  for (const ConvSpec& b : config.front_branches) {
    layers.push_back(ConvLayer::zeros(config.input_channels, b.out_channels, b.kernel_size, b.kernel_size));
  }
  std::size_t channels = config.fused_channels();
  for (const ConvSpec& b : config.backend) {
    layers.push_back(ConvLayer::zeros(channels, b.out_channels, b.kernel_size, b.kernel_size));
    channels = b.out_channels;
  }
  return layers;
}

ModelParams zero_params(const CCNNConfig& config) {
  auto shapes = layer_shapes(config);
  ModelParams params;
  const std::size_t branches = config.front_branches.size();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    std::string name = i < branches ? "front" + std::to_string(i) + "_k" + std::to_string(shapes[i].kernel_h)
                                    : "backend" + std::to_string(i - branches + 1);
    params.layers.push_back({std::move(name), std::move(shapes[i])});
  }
  return params;
}

ModelParams build(const CCNNConfig& config, std::uint64_t seed) {
  ModelParams params = zero_params(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, kInitStd);
  for (NamedLayer& l : params.layers) {
    for (float& w : l.layer.weights) w = normal(rng);
  }
  return params;
}

std::size_t count_parameters(std::span<const ConvLayer> layers) {
  std::size_t total = 0;
  for (const ConvLayer& l : layers) total += l.parameter_count();
  return total;
}

std::size_t count_parameters(const CCNNConfig& config) {
  const auto shapes = layer_shapes(config);
  return count_parameters(shapes);
}

Tensor forward(const ModelParams& params, const CCNNConfig& config, const Tensor& images,
               const ComputeOptions& opts) {
  check_images(params, config, images.shape());
  EagerOps ops{params, opts};
  return run_network(ops, config, images);
}

Var forward(GradTape& tape, const ModelParams& params, const CCNNConfig& config, Var images,
            ModelGrads& grads) {
  check_images(params, config, tape.value(images).shape());
  if (grads.layers.size() != params.layers.size()) {
    throw InvalidArgument("forward: gradient sinks do not match the parameters");
  }
  TapeOps ops{tape, params, grads};
  return run_network(ops, config, images);
}

Tensor fused_features(const ModelParams& params, const CCNNConfig& config, const Tensor& images,
                      const ComputeOptions& opts) {
  check_images(params, config, images.shape());
  EagerOps ops{params, opts};
  return run_network(ops, config, images, /*stop_after_fusion=*/true);
}

DensityMap to_density_map(const Tensor& output, std::size_t sample, std::uint32_t scale) {
  const Shape& s = output.shape();
  if (s.c != 1 || sample >= s.n) {
    throw InvalidArgument("to_density_map: expected a single-channel output, got " + s.to_string());
  }
  const auto data = output.sample(sample);
  return DensityMap{s.h, s.w, scale, std::vector<float>(data.begin(), data.end())};
}

Variant parse_variant(std::string_view name) {
  if (name == "only5") return Variant::only5;
  if (name == "only7") return Variant::only7;
  if (name == "only9") return Variant::only9;
  if (name == "no_last_pool") return Variant::no_last_pool;
  if (name == "full") return Variant::full;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected only5, only7, only9, no_last_pool or full)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::only5: return "only5";
    case Variant::only7: return "only7";
    case Variant::only9: return "only9";
    case Variant::no_last_pool: return "no_last_pool";
    case Variant::full: return "full";
  }
  return "full";
}

CCNNConfig ablation_variant(Variant which) {
  CCNNConfig config;
  const std::size_t width = config.fused_channels();
  switch (which) {
    case Variant::only5: config.front_branches = {{5, width}}; break;
    case Variant::only7: config.front_branches = {{7, width}}; break;
    case Variant::only9: config.front_branches = {{9, width}}; break;
    case Variant::no_last_pool: config.include_last_pool = false; break;
    case Variant::full: break;
  }
  return config;
}

}  // namespace ccnn
