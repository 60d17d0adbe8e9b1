#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccnn/density.hpp"
#include "ccnn/grad_tape.hpp"
#include "ccnn/layers.hpp"
#include "ccnn/parallel.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

/// Square odd kernel and output width of one convolution.
struct ConvSpec {
  std::size_t kernel_size = 3;
  std::size_t out_channels = 1;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Architecture of a compact crowd-counting network.
///
/// Front branches run in parallel on the input (conv, ReLU, 2x2 pool) and
/// are concatenated. The backend is a conv/ReLU stack with 2x2 pools after
/// the 1-based layers listed in pool_after_backend; its last layer is the
/// 1x1 density head.
struct CCNNConfig {
  std::vector<ConvSpec> front_branches{{9, 10}, {7, 14}, {5, 16}};
  std::vector<ConvSpec> backend{{3, 32}, {3, 32}, {3, 64}, {3, 32}, {3, 16}, {1, 1}};
  std::set<std::size_t> pool_after_backend{3, 4};
  bool include_last_pool = true;
  std::size_t input_channels = 1;

  static constexpr std::size_t kBackendDepth = 6;

  /// Throws ConfigError naming the violated rule.
  void validate() const;

  /// Backend layers (1-based) that are actually followed by a pool.
  std::set<std::size_t> active_backend_pools() const;
  /// Input-to-output resolution ratio.
  std::size_t downsampling_factor() const;
  std::size_t fused_channels() const;

  friend bool operator==(const CCNNConfig&, const CCNNConfig&) = default;
};

/// Canonical JSON (sorted keys, compact).
std::string config_to_json(const CCNNConfig& config);
/// Throws ConfigError on malformed or invalid input.
CCNNConfig config_from_json(std::string_view json);

struct NamedLayer {
  std::string name;
  ConvLayer layer;
};

/// All conv layers of a model: front branches in config order (descending
/// kernel size), then backend layers.
struct ModelParams {
  std::vector<NamedLayer> layers;

  std::size_t parameter_count() const noexcept;
  /// Weights then bias of each layer, in layer order.
  std::vector<float> flatten() const;
  void assign(std::span<const float> flat);

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Gradient sinks congruent to a ModelParams.
struct ModelGrads {
  std::vector<ConvGrads> layers;

  static ModelGrads like(const ModelParams& params);
  void zero();
  std::vector<float> flatten() const;
};

/// Every conv layer shape the config implies, in ModelParams order.
std::vector<ConvLayer> layer_shapes(const CCNNConfig& config);

/// All-zero parameters with the layer names and shapes the config implies.
ModelParams zero_params(const CCNNConfig& config);

/// Weights ~ N(0, 0.01), biases zero, from a generator seeded by `seed`.
ModelParams build(const CCNNConfig& config, std::uint64_t seed);

/// Sum of (k*k*cin + 1)*cout over a plain list of conv layers.
std::size_t count_parameters(std::span<const ConvLayer> layers);
std::size_t count_parameters(const CCNNConfig& config);

/// Density maps (n, 1, h/f, w/f) for an (n, input_channels, h, w) image batch.
Tensor forward(const ModelParams& params, const CCNNConfig& config, const Tensor& images,
               const ComputeOptions& opts = {});

/// Same network recorded on `tape`, with parameter gradients routed into `grads`.
Var forward(GradTape& tape, const ModelParams& params, const CCNNConfig& config, Var images,
            ModelGrads& grads);

/// Concatenated front-branch features, before any backend layer.
Tensor fused_features(const ModelParams& params, const CCNNConfig& config, const Tensor& images,
                      const ComputeOptions& opts = {});

/// Converts one sample of a forward output into a DensityMap.
DensityMap to_density_map(const Tensor& output, std::size_t sample, std::uint32_t scale);

enum class Variant { only5, only7, only9, no_last_pool, full };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
CCNNConfig ablation_variant(Variant which);

}  // namespace ccnn
