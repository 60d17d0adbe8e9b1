#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccnn/dataset.hpp"
#include "ccnn/density.hpp"
#include "ccnn/model.hpp"
#include "ccnn/parallel.hpp"

namespace ccnn {

struct TrainConfig {
  int epochs = 1;
  std::size_t batch_size = 8;
  double lr = 1e-5;
  std::uint64_t seed = 0;
  KernelSpec kernel;
  CCNNConfig model;
  /// Evaluate on val (and save a checkpoint when checkpoint_path is set)
  /// every this many epochs; 0 disables.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  /// Line-delimited JSON log; empty disables.
  std::filesystem::path log_path;
  /// Training scenes are center-cropped to this size so batches stack.
  std::size_t crop_height = 192;
  std::size_t crop_width = 192;
  /// Stop after this many optimizer steps; 0 means run all epochs.
  long max_steps = 0;
  ComputeOptions compute;

  /// Throws ConfigError.
  void validate() const;
};

/// Reads either a full training config ({"epochs", "lr", "model": {...}, ...})
/// or a bare model config as printed by `ccnn variant`. Throws ConfigError.
TrainConfig train_config_from_json(std::string_view json);
std::string train_config_to_json(const TrainConfig& config);

struct SceneCount {
  std::string id;
  double predicted = 0.0;
  double ground_truth = 0.0;
};

struct Metrics {
  double mae = 0.0;
  /// Root of the mean squared count error.
  double mse = 0.0;
  std::vector<SceneCount> per_scene;  ///< sorted by id

  std::size_t n() const noexcept { return per_scene.size(); }
};

/// MAE and rooted MSE over per-scene counts. Order of `counts` does not matter.
Metrics compute_metrics(std::vector<SceneCount> counts);

std::string metrics_to_json(const Metrics& m, std::string_view split);

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;  ///< mean step loss per epoch
  std::vector<Metrics> validation;
};

/// Adam on the batch Euclidean density loss. Throws DivergedError on a
/// non-finite loss and InvalidArgument on an empty training set.
TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes, const TrainConfig& config);

/// Same, starting from existing parameters.
TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes, const TrainConfig& config,
                  ModelParams initial);

/// Predicted count = sum of the predicted density map; ground truth = head count.
/// Scenes run one at a time at their own resolution (must be divisible by 8).
Metrics evaluate(const ModelParams& params, const CCNNConfig& config, std::span<const Scene> scenes,
                 const ComputeOptions& opts = {});

}  // namespace ccnn
