#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ccnn/bench.hpp"
#include "ccnn/checkpoint.hpp"
#include "ccnn/dataset.hpp"
#include "ccnn/density.hpp"
#include "ccnn/errors.hpp"
#include "ccnn/image_io.hpp"
#include "ccnn/model.hpp"
#include "ccnn/train.hpp"
#include "json.hpp"

namespace ccnn::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Inline JSON or a path to a JSON file.
std::string json_argument(const std::string& value) {
  const auto first = value.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && value[first] == '{') return value;
  return read_text(value);
}

struct SynthArgs {
  std::string spec;
  std::string out;
  std::size_t count = 20;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticSceneSpec base = a.spec.empty() ? SyntheticSceneSpec{} : synthetic_spec_from_json(json_argument(a.spec));
  if (a.train_fraction < 0.0 || a.val_fraction < 0.0 || a.train_fraction + a.val_fraction > 1.0) {
    throw ConfigError("synth: split fractions must be nonnegative and sum to at most 1");
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);

  const auto n_train = static_cast<std::size_t>(a.train_fraction * static_cast<double>(a.count));
  const auto n_val = static_cast<std::size_t>(a.val_fraction * static_cast<double>(a.count));
  std::vector<ManifestEntry> entries;
  std::size_t heads = 0;
  for (std::size_t i = 0; i < a.count; ++i) {
    SyntheticSceneSpec spec = base;
    spec.seed = base.seed + i;
    const Scene scene = generate_synthetic(spec);
    heads += scene.head_count();
    const fs::path annotation = save_scene(scene, dir);
    const std::string split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    entries.push_back({annotation.filename(), split});
  }
  write_manifest(dir / "manifest.json", entries);
  out << json{{"scenes", a.count}, {"heads", heads}, {"manifest", (dir / "manifest.json").string()}}.dump() << "\n";
  return 0;
}

struct GenGtArgs {
  std::string manifest;
  std::string mode = "fixed";
  double sigma = 15.0;
  double beta = 0.3;
  int k = 3;
  double truncation = 4.0;
  std::size_t scale = 8;
  std::string out;
};

int run_gen_gt(const GenGtArgs& a, std::ostream& out) {
  KernelSpec kernel;
  if (a.mode != "fixed" && a.mode != "adaptive") throw ConfigError("gen-gt: --mode must be fixed or adaptive");
  kernel.mode = a.mode == "fixed" ? KernelSpec::Mode::fixed : KernelSpec::Mode::adaptive;
  kernel.sigma_fixed = a.sigma;
  kernel.beta = a.beta;
  kernel.k_neighbors = a.k;
  kernel.truncation_radius_sigmas = a.truncation;
  kernel.validate();
  if (a.scale != 1 && a.scale != 2 && a.scale != 4 && a.scale != 8) throw ConfigError("gen-gt: --scale must be 1, 2, 4 or 8");

  const fs::path dir(a.out);
  fs::create_directories(dir);
  json files = json::array();
  for (const ManifestEntry& e : read_manifest(a.manifest)) {
    const Scene scene = load_scene(e.annotation);
    DensityMap dm = render_density(scene.annotations, kernel);
    if (a.scale != 1) dm = downsample_preserving_count(dm, a.scale);
    const fs::path path = dir / (scene.id + ".cdm");
    write_cdm(path, dm);
    files.push_back({{"id", scene.id}, {"path", path.string()}, {"heads", scene.head_count()}, {"sum", dm.sum()}});
  }
  out << json{{"files", files}}.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<long> max_steps;
  std::optional<int> threads;
  std::string log;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(json_argument(a.config));
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.lr) cfg.lr = *a.lr;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.seed) cfg.seed = *a.seed;
  if (a.max_steps) cfg.max_steps = *a.max_steps;
  if (a.threads) cfg.compute.threads = *a.threads;
  cfg.log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  cfg.validate();

  const std::size_t channels = cfg.model.input_channels;
  const std::vector<Scene> train_scenes = load_split(a.manifest, "train", channels);
  const std::vector<Scene> val_scenes = load_split(a.manifest, "val", channels);
  if (train_scenes.empty()) throw InvalidArgument("train: manifest has no train scenes");

  const TrainResult result = train(train_scenes, val_scenes, cfg);
  save_checkpoint(result.params, cfg.model, a.out);

  json summary{{"checkpoint", a.out},
               {"log", cfg.log_path.string()},
               {"epochs", result.epoch_loss.size()},
               {"steps", result.steps.size()},
               {"initial_loss", result.steps.front().loss},
               {"final_loss", result.steps.back().loss}};
  if (!val_scenes.empty()) {
    const Metrics m = evaluate(result.params, cfg.model, val_scenes, cfg.compute);
    summary["val"] = {{"mae", m.mae}, {"mse", m.mse}, {"n", m.n()}};
  }
  out << summary.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::string split = "test";
  int threads = 1;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const std::vector<Scene> scenes = load_split(a.manifest, a.split, ckpt.config.input_channels);
  if (scenes.empty()) throw InvalidArgument("eval: manifest has no '" + a.split + "' scenes");
  const Metrics m = evaluate(ckpt.params, ckpt.config, scenes, ComputeOptions{a.threads});
  out << metrics_to_json(m, a.split) << "\n";
  return 0;
}

struct BenchArgs {
  std::string ckpt;
  std::string variant = "full";
  std::size_t height = 768;
  std::size_t width = 1024;
  int warmup = 5;
  int runs = 50;
  int threads = 1;
  std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a, std::ostream& out) {
  Checkpoint model;
  if (a.ckpt.empty()) {
    model.config = ablation_variant(parse_variant(a.variant));
    model.params = build(model.config, a.seed);
  } else {
    model = load_checkpoint(a.ckpt);
  }
  const BenchReport report =
      bench_forward(model.params, model.config, a.height, a.width, a.warmup, a.runs, a.threads, a.seed);
  out << report.to_json() << "\n";
  return 0;
}

int run_variant(const std::string& which, std::ostream& out) {
  out << config_to_json(ablation_variant(parse_variant(which))) << "\n";
  return 0;
}

struct RenderArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  int threads = 1;
};

int run_render(const RenderArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  Tensor image = read_pnm(a.image);
  if (ckpt.config.input_channels == 1) image = to_grayscale(image);
  const std::size_t h = image.shape().h - image.shape().h % 8;
  const std::size_t w = image.shape().w - image.shape().w % 8;
  Scene scene{image, HeadAnnotations{image.shape().h, image.shape().w, {}}, "render"};
  scene = center_crop(scene, h, w);
  const Tensor pred = forward(ckpt.params, ckpt.config, scene.image, ComputeOptions{a.threads});
  const DensityMap dm = to_density_map(pred, 0, static_cast<std::uint32_t>(ckpt.config.downsampling_factor()));
  write_cdm(a.out, dm);
  out << json{{"out", a.out}, {"height", dm.height}, {"width", dm.width}, {"scale", dm.scale}, {"count", dm.sum()}}.dump()
      << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compact crowd-counting CNN: data, training, evaluation and benchmarking", "ccnn"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic crowd scenes and a manifest");
  synth_cmd->add_option("--spec", synth.spec, "Synthetic scene spec (JSON file or inline JSON)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of scenes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--train-frac", synth.train_fraction, "Fraction of scenes in the train split");
  synth_cmd->add_option("--val-frac", synth.val_fraction, "Fraction of scenes in the val split");

  GenGtArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-gt", "Render CDM1 ground-truth density files");
  gen_cmd->add_option("--manifest", gen.manifest, "Dataset manifest")->required();
  gen_cmd->add_option("--mode", gen.mode, "fixed or adaptive")->check(CLI::IsMember({"fixed", "adaptive"}));
  gen_cmd->add_option("--sigma", gen.sigma, "Fixed Gaussian sigma (pixels)");
  gen_cmd->add_option("--beta", gen.beta, "Adaptive sigma multiplier");
  gen_cmd->add_option("--k", gen.k, "Neighbours for the adaptive sigma");
  gen_cmd->add_option("--truncation", gen.truncation, "Stamp radius in sigmas");
  gen_cmd->add_option("--scale", gen.scale, "Downsampling factor (1, 2, 4, 8)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on the train split");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--config", tr.config, "Train or model config (JSON file or inline JSON)");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Override epochs");
  train_cmd->add_option("--lr", tr.lr, "Override learning rate");
  train_cmd->add_option("--batch-size", tr.batch_size, "Override batch size");
  train_cmd->add_option("--seed", tr.seed, "Override seed");
  train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many steps");
  train_cmd->add_option("--threads", tr.threads, "Kernel threads");
  train_cmd->add_option("--log", tr.log, "JSONL log path (default <out>.log.jsonl)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate MAE/MSE of a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--threads", ev.threads, "Kernel threads")->check(CLI::PositiveNumber);

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time forward passes at a fixed resolution");
  bench_cmd->add_option("--ckpt", bn.ckpt, "Checkpoint path (default: freshly built model)");
  bench_cmd->add_option("--variant", bn.variant, "Architecture when no checkpoint is given");
  bench_cmd->add_option("--height", bn.height, "Image height");
  bench_cmd->add_option("--width", bn.width, "Image width");
  bench_cmd->add_option("--warmup", bn.warmup, "Untimed warmup runs")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--runs", bn.runs, "Timed runs")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--threads", bn.threads, "Kernel threads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bn.seed, "Seed for the input image and fresh weights");

  std::string which;
  auto* variant_cmd = app.add_subcommand("variant", "Print an ablation model config as JSON");
  variant_cmd->add_option("--which", which, "only5, only7, only9, no_last_pool or full")
      ->required()
      ->check(CLI::IsMember({"only5", "only7", "only9", "no_last_pool", "full"}));

  RenderArgs rn;
  auto* render_cmd = app.add_subcommand("render", "Write a predicted density raster for one image");
  render_cmd->add_option("--ckpt", rn.ckpt, "Checkpoint path")->required();
  render_cmd->add_option("--image", rn.image, "PGM/PPM image")->required();
  render_cmd->add_option("--out", rn.out, "Output CDM1 path")->required();
  render_cmd->add_option("--threads", rn.threads, "Kernel threads")->check(CLI::PositiveNumber);

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth, out);
    if (*gen_cmd) return run_gen_gt(gen, out);
    if (*train_cmd) return run_train(tr, out);
    if (*eval_cmd) return run_eval(ev, out);
    if (*bench_cmd) return run_bench(bn, out);
    if (*variant_cmd) return run_variant(which, out);
    if (*render_cmd) return run_render(rn, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ccnn::cli
