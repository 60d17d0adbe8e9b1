#include "ccnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "ccnn/adam.hpp"
#include "ccnn/checkpoint.hpp"
#include "ccnn/errors.hpp"
#include "ccnn/grad_tape.hpp"
#include "json.hpp"

namespace ccnn {
namespace {

using json = nlohmann::json;

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1));
}

json kernel_to_json(const KernelSpec& k) {
  return {{"mode", k.mode == KernelSpec::Mode::fixed ? "fixed" : "adaptive"},
          {"sigma", k.sigma_fixed},
          {"beta", k.beta},
          {"k", k.k_neighbors},
          {"truncation", k.truncation_radius_sigmas}};
}

KernelSpec kernel_from_json(const json& j) {
  KernelSpec k;
  const std::string mode = j.value("mode", std::string("fixed"));
  if (mode != "fixed" && mode != "adaptive") throw ConfigError("kernel mode must be fixed or adaptive");
  k.mode = mode == "fixed" ? KernelSpec::Mode::fixed : KernelSpec::Mode::adaptive;
  k.sigma_fixed = j.value("sigma", k.sigma_fixed);
  k.beta = j.value("beta", k.beta);
  k.k_neighbors = j.value("k", k.k_neighbors);
  k.truncation_radius_sigmas = j.value("truncation", k.truncation_radius_sigmas);
  return k;
}

class JsonLog {
 public:
  explicit JsonLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    out_.emplace(path, std::ios::trunc);
    if (!*out_) throw std::runtime_error("cannot open log " + path.string());
  }

  void write(const std::string& line) {
    if (out_) *out_ << line << '\n' << std::flush;
  }

 private:
  std::optional<std::ofstream> out_;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be > 0");
  if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
  if (max_steps < 0) throw ConfigError("train config: max_steps must be >= 0");
  if (compute.threads < 1) throw ConfigError("train config: threads must be >= 1");
  if ((crop_height == 0) != (crop_width == 0) || crop_height % 8 != 0 || crop_width % 8 != 0) {
    throw ConfigError("train config: crop size must be a multiple of 8 (or 0x0 to disable cropping)");
  }
  kernel.validate();
  model.validate();
}

TrainConfig train_config_from_json(std::string_view text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    if (j.contains("front_branches") || j.contains("backend")) {
      cfg.model = config_from_json(text);
    } else {
      if (j.contains("model")) cfg.model = config_from_json(j.at("model").dump());
      if (j.contains("kernel")) cfg.kernel = kernel_from_json(j.at("kernel"));
      cfg.epochs = j.value("epochs", cfg.epochs);
      cfg.batch_size = j.value("batch_size", cfg.batch_size);
      cfg.lr = j.value("lr", cfg.lr);
      cfg.seed = j.value("seed", cfg.seed);
      cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
      cfg.max_steps = j.value("max_steps", cfg.max_steps);
      if (j.contains("crop")) {
        cfg.crop_height = j.at("crop").at(0).get<std::size_t>();
        cfg.crop_width = j.at("crop").at(1).get<std::size_t>();
      }
      if (j.contains("log")) cfg.log_path = j.at("log").get<std::string>();
      cfg.compute.threads = j.value("threads", cfg.compute.threads);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["max_steps"] = cfg.max_steps;
  j["crop"] = {cfg.crop_height, cfg.crop_width};
  j["threads"] = cfg.compute.threads;
  j["kernel"] = kernel_to_json(cfg.kernel);
  j["model"] = json::parse(config_to_json(cfg.model));
  if (!cfg.log_path.empty()) j["log"] = cfg.log_path.string();
  return j.dump();
}

Metrics compute_metrics(std::vector<SceneCount> counts) {
  std::sort(counts.begin(), counts.end(), [](const SceneCount& a, const SceneCount& b) { return a.id < b.id; });
  Metrics m;
  if (!counts.empty()) {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (const SceneCount& c : counts) {
      const double e = c.predicted - c.ground_truth;
      abs_sum += std::abs(e);
      sq_sum += e * e;
    }
    const auto n = static_cast<double>(counts.size());
    m.mae = abs_sum / n;
    m.mse = std::sqrt(sq_sum / n);
  }
  m.per_scene = std::move(counts);
  return m;
}

std::string metrics_to_json(const Metrics& m, std::string_view split) {
  json j;
  j["split"] = split;
  j["mae"] = m.mae;
  j["mse"] = m.mse;
  j["n"] = m.n();
  j["per_scene"] = json::array();
  for (const SceneCount& c : m.per_scene) {
    j["per_scene"].push_back({{"id", c.id}, {"predicted", c.predicted}, {"gt", c.ground_truth}});
  }
  return j.dump();
}

Metrics evaluate(const ModelParams& params, const CCNNConfig& config, std::span<const Scene> scenes,
                 const ComputeOptions& opts) {
  if (scenes.empty()) throw InvalidArgument("evaluate: no scenes");
  std::vector<SceneCount> counts;
  counts.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    const Tensor out = forward(params, config, scene.image, opts);
    counts.push_back({scene.id, out.sum(), static_cast<double>(scene.head_count())});
  }
  return compute_metrics(std::move(counts));
}

TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes, const TrainConfig& config) {
  config.validate();
  return train(train_scenes, val_scenes, config, build(config.model, config.seed));
}

TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes, const TrainConfig& config,
                  ModelParams initial) {
  config.validate();
  if (train_scenes.empty()) throw InvalidArgument("train: empty training set");

  std::vector<Scene> cropped;
  cropped.reserve(train_scenes.size());
  for (const Scene& s : train_scenes) {
    cropped.push_back(config.crop_height == 0 ? s : center_crop(s, config.crop_height, config.crop_width));
  }
  const std::vector<Sample> samples = prepare_samples(cropped, config.model.downsampling_factor(), config.kernel);

  TrainResult result{std::move(initial), {}, {}, {}};
  ModelParams& params = result.params;
  ModelGrads grads = ModelGrads::like(params);
  AdamState adam = AdamState::for_size(params.parameter_count(), config.lr);
  JsonLog log(config.log_path);

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (const Batch& batch : make_batches(samples, config.batch_size, epoch_seed(config.seed, epoch))) {
      grads.zero();
      GradTape tape(config.compute);
      const Var images = tape.input(batch.images);
      const Var pred = forward(tape, params, config.model, images, grads);
      const Var loss = tape.euclidean_loss(pred, batch.gt_density);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw DivergedError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(step),
                            epoch, step);
      }
      tape.backward(loss);

      std::vector<float> flat = params.flatten();
      adam_step(flat, grads.flatten(), adam);
      params.assign(flat);

      result.steps.push_back({epoch, step, value});
      log.write(json{{"epoch", epoch}, {"step", step}, {"loss", value}}.dump());
      epoch_total += value;
      ++epoch_steps;
      ++step;
      if (config.max_steps > 0 && step >= config.max_steps) break;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(std::max<std::size_t>(1, epoch_steps)));

    const bool last = epoch + 1 == config.epochs || (config.max_steps > 0 && step >= config.max_steps);
    if (config.checkpoint_every > 0 && ((epoch + 1) % config.checkpoint_every == 0 || last)) {
      if (!val_scenes.empty()) {
        Metrics m = evaluate(params, config.model, val_scenes, config.compute);
        log.write(json{{"split", "val"}, {"epoch", epoch}, {"mae", m.mae}, {"mse", m.mse}, {"n", m.n()}}.dump());
        result.validation.push_back(std::move(m));
      }
      if (!config.checkpoint_path.empty()) save_checkpoint(params, config.model, config.checkpoint_path);
    }
    if (last) break;
  }
  return result;
}

}  // namespace ccnn
