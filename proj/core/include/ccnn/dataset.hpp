#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ccnn/density.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

/// An image paired with its head annotations. image is (1, c, h, w) and
/// annotations.height/width equal h/w.
struct Scene {
  Tensor image;
  HeadAnnotations annotations;
  std::string id;

  std::size_t head_count() const noexcept { return annotations.points.size(); }
};

/// Loads an annotation JSON ({"image", "width", "height", "points"}) and the
/// PGM/PPM it references (relative paths resolve against the JSON's
/// directory). The image is converted to `channels` channels and
/// center-cropped to multiples of 8; heads outside the crop are dropped.
/// Throws DatasetError.
Scene load_scene(const std::filesystem::path& annotation_path, std::size_t channels = 1);

/// Center crop to height x width; heads falling outside are removed.
Scene center_crop(const Scene& scene, std::size_t height, std::size_t width);

/// Writes the scene as <dir>/<id>.pgm plus <dir>/<id>.json; returns the JSON path.
std::filesystem::path save_scene(const Scene& scene, const std::filesystem::path& dir);

struct SyntheticSceneSpec {
  std::size_t height = 192;
  std::size_t width = 192;
  std::size_t min_heads = 10;
  std::size_t max_heads = 60;
  std::size_t min_clusters = 1;
  std::size_t max_clusters = 4;
  /// Standard deviation (pixels) of head offsets around a cluster centre.
  double cluster_spread = 20.0;
  double min_radius = 2.0;
  double max_radius = 4.0;
  double min_intensity = 0.6;
  double max_intensity = 1.0;
  double background = 0.15;
  double noise = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError on empty ranges or non-positive sizes.
  void validate() const;
};

std::string synthetic_spec_to_json(const SyntheticSceneSpec& spec);
/// Missing keys keep their defaults. Throws ConfigError.
SyntheticSceneSpec synthetic_spec_from_json(std::string_view json);

/// Gaussian-clustered heads drawn as filled disks over a noisy background.
/// Deterministic in spec.seed; annotations are the exact sampled centres.
Scene generate_synthetic(const SyntheticSceneSpec& spec);

struct ManifestEntry {
  std::filesystem::path annotation;
  std::string split;
};

/// JSON list of {"annotation": path, "split": "train"|"val"|"test"};
/// relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Loads every scene of `split` listed in the manifest, in manifest order.
std::vector<Scene> load_split(const std::filesystem::path& manifest, std::string_view split,
                              std::size_t channels = 1);

/// A scene paired with its ground truth at the model's output scale.
struct Sample {
  const Scene* scene = nullptr;
  DensityMap gt;
};

/// Renders each scene's density at full resolution and sum-pools it by `factor`.
std::vector<Sample> prepare_samples(std::span<const Scene> scenes, std::size_t factor, const KernelSpec& kernel);

struct Batch {
  Tensor images;        ///< (n, c, h, w)
  Tensor gt_density;    ///< (n, 1, h/f, w/f)
  std::vector<std::size_t> members;  ///< indices into the source list
  std::size_t head_count = 0;
};

/// Shuffles sample order with `shuffle_seed` and stacks consecutive groups of
/// batch_size; the final batch may be smaller. Throws InvalidArgument when
/// scenes differ in dimensions.
std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size,
                                std::uint64_t shuffle_seed);

std::vector<Batch> make_batches(std::span<const Scene> scenes, std::size_t batch_size, std::size_t factor,
                                const KernelSpec& kernel, std::uint64_t shuffle_seed);

}  // namespace ccnn
