#include "ccnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ccnn/errors.hpp"
#include "ccnn/image_io.hpp"
#include "json.hpp"

namespace ccnn {
namespace {

using json = nlohmann::json;
using Kind = DatasetError::Kind;
namespace fs = std::filesystem;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(Kind::missing_file, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(Kind::malformed, path.string() + ": malformed JSON: " + e.what());
  }
}

std::string point_string(double x, double y) {
  std::ostringstream os;
  os << "(" << x << ", " << y << ")";
  return os.str();
}

Tensor crop_tensor(const Tensor& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  const Shape& s = image.shape();
  Tensor out(Shape{s.n, s.c, height, width});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) out.at(n, c, y, x) = image.at(n, c, top + y, left + x);
      }
    }
  }
  return out;
}

Tensor with_channels(const Tensor& image, std::size_t channels) {
  const Shape& s = image.shape();
  if (s.c == channels) return image;
  if (channels == 1) return to_grayscale(image);
  if (channels == 3 && s.c == 1) {
    Tensor rgb(Shape{s.n, 3, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto src = image.sample(n);
      auto dst = rgb.sample(n);
      for (std::size_t c = 0; c < 3; ++c) std::copy(src.begin(), src.end(), dst.begin() + c * s.plane());
    }
    return rgb;
  }
  throw InvalidArgument("cannot convert a " + std::to_string(s.c) + "-channel image to " +
                        std::to_string(channels) + " channels");
}

template <class T>
T uniform_in(std::mt19937_64& rng, T lo, T hi) {
  if constexpr (std::is_integral_v<T>) {
    return std::uniform_int_distribution<T>(lo, hi)(rng);
  } else {
    return lo == hi ? lo : std::uniform_real_distribution<T>(lo, hi)(rng);
  }
}

}  // namespace

Scene load_scene(const fs::path& annotation_path, std::size_t channels) {
  const json j = read_json(annotation_path);
  const std::string where = annotation_path.string();

  std::string image_ref;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Point> points;
  try {
    image_ref = j.at("image").get<std::string>();
    width = j.at("width").get<std::size_t>();
    height = j.at("height").get<std::size_t>();
    for (const json& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw DatasetError(Kind::malformed, where + ": points must be [x, y] pairs");
      points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
  } catch (const json::exception& e) {
    throw DatasetError(Kind::malformed, where + ": " + e.what());
  }

  for (const Point& p : points) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(width) && p.y < static_cast<double>(height))) {
      throw DatasetError(Kind::out_of_bounds, where + ": point " + point_string(p.x, p.y) +
                                                  " lies outside the " + std::to_string(width) + "x" +
                                                  std::to_string(height) + " image");
    }
  }

  fs::path image_path(image_ref);
  if (image_path.is_relative()) image_path = annotation_path.parent_path() / image_path;
  if (!fs::exists(image_path)) {
    throw DatasetError(Kind::missing_file, where + ": image " + image_path.string() + " not found");
  }
  Tensor image;
  try {
    image = read_pnm(image_path);
  } catch (const FormatError& e) {
    throw DatasetError(Kind::malformed, e.what());
  }
  if (image.shape().h != height || image.shape().w != width) {
    throw DatasetError(Kind::dimension_mismatch,
                       where + ": annotation declares " + std::to_string(width) + "x" + std::to_string(height) +
                           " but image is " + std::to_string(image.shape().w) + "x" +
                           std::to_string(image.shape().h));
  }

  Scene scene{with_channels(image, channels), HeadAnnotations{height, width, std::move(points)},
              annotation_path.stem().string()};
  const std::size_t crop_h = height - height % 8;
  const std::size_t crop_w = width - width % 8;
  if (crop_h == 0 || crop_w == 0) {
    throw DatasetError(Kind::dimension_mismatch, where + ": image smaller than 8 pixels in one dimension");
  }
  return center_crop(scene, crop_h, crop_w);
}

Scene center_crop(const Scene& scene, std::size_t height, std::size_t width) {
  const Shape& s = scene.image.shape();
  if (height > s.h || width > s.w || height == 0 || width == 0) {
    throw InvalidArgument("center_crop: cannot crop " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                          " to " + std::to_string(width) + "x" + std::to_string(height));
  }
  if (height == s.h && width == s.w) return scene;
  const std::size_t top = (s.h - height) / 2;
  const std::size_t left = (s.w - width) / 2;

  Scene out{crop_tensor(scene.image, top, left, height, width), HeadAnnotations{height, width, {}}, scene.id};
  for (const Point& p : scene.annotations.points) {
    const Point q{p.x - static_cast<double>(left), p.y - static_cast<double>(top)};
    if (q.x >= 0.0 && q.y >= 0.0 && q.x < static_cast<double>(width) && q.y < static_cast<double>(height)) {
      out.annotations.points.push_back(q);
    }
  }
  return out;
}

fs::path save_scene(const Scene& scene, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path image_path = dir / (scene.id + ".pgm");
  const fs::path json_path = dir / (scene.id + ".json");
  if (scene.image.shape().c == 3) {
    write_ppm(dir / (scene.id + ".ppm"), scene.image);
  } else {
    write_pgm(image_path, scene.image);
  }
  json j;
  j["image"] = scene.image.shape().c == 3 ? scene.id + ".ppm" : scene.id + ".pgm";
  j["width"] = scene.annotations.width;
  j["height"] = scene.annotations.height;
  j["points"] = json::array();
  for (const Point& p : scene.annotations.points) j["points"].push_back({p.x, p.y});
  std::ofstream out(json_path);
  if (!out) throw DatasetError(Kind::missing_file, "cannot write " + json_path.string());
  out << j.dump() << "\n";
  return json_path;
}

void SyntheticSceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synthetic spec: " + what); };
  if (height == 0 || width == 0) fail("image size must be positive");
  if (min_heads > max_heads) fail("head_count range is empty");
  if (min_clusters > max_clusters || max_clusters == 0) fail("cluster_count range is empty");
  if (!(cluster_spread > 0.0)) fail("cluster_spread must be > 0");
  if (!(min_radius > 0.0) || min_radius > max_radius) fail("radius range is empty");
  if (min_intensity > max_intensity || min_intensity < 0.0 || max_intensity > 1.0) fail("intensity range is invalid");
  if (noise < 0.0 || background < 0.0 || background > 1.0) fail("background/noise levels are invalid");
}

std::string synthetic_spec_to_json(const SyntheticSceneSpec& spec) {
  json j;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["head_count"] = {spec.min_heads, spec.max_heads};
  j["cluster_count"] = {spec.min_clusters, spec.max_clusters};
  j["cluster_spread"] = spec.cluster_spread;
  j["radius"] = {spec.min_radius, spec.max_radius};
  j["intensity"] = {spec.min_intensity, spec.max_intensity};
  j["background"] = spec.background;
  j["noise"] = spec.noise;
  j["seed"] = spec.seed;
  return j.dump();
}

SyntheticSceneSpec synthetic_spec_from_json(std::string_view text) {
  SyntheticSceneSpec spec;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
    auto range = [&](const char* key, auto& lo, auto& hi) {
      if (!j.contains(key)) return;
      const json& r = j.at(key);
      if (!r.is_array() || r.size() != 2) throw ConfigError(std::string("synthetic spec: ") + key + " must be [lo, hi]");
      lo = r.at(0).get<std::remove_reference_t<decltype(lo)>>();
      hi = r.at(1).get<std::remove_reference_t<decltype(hi)>>();
    };
    spec.height = j.value("height", spec.height);
    spec.width = j.value("width", spec.width);
    range("head_count", spec.min_heads, spec.max_heads);
    range("cluster_count", spec.min_clusters, spec.max_clusters);
    spec.cluster_spread = j.value("cluster_spread", spec.cluster_spread);
    range("radius", spec.min_radius, spec.max_radius);
    range("intensity", spec.min_intensity, spec.max_intensity);
    spec.background = j.value("background", spec.background);
    spec.noise = j.value("noise", spec.noise);
    spec.seed = j.value("seed", spec.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed synthetic spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

Scene generate_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto w = static_cast<double>(spec.width);
  const auto h = static_cast<double>(spec.height);

  const std::size_t heads = uniform_in(rng, spec.min_heads, spec.max_heads);
  const std::size_t clusters = uniform_in(rng, std::max<std::size_t>(1, spec.min_clusters), spec.max_clusters);
  std::vector<Point> centres(clusters);
  for (Point& c : centres) c = {uniform_in(rng, 0.0, w), uniform_in(rng, 0.0, h)};

  std::normal_distribution<double> offset(0.0, spec.cluster_spread);
  std::vector<Point> points;
  points.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const Point& c = centres[uniform_in<std::size_t>(rng, 0, clusters - 1)];
    Point p{-1.0, -1.0};
    for (int attempt = 0; attempt < 64; ++attempt) {
      p = {c.x + offset(rng), c.y + offset(rng)};
      if (p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h) break;
    }
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h)) p = {uniform_in(rng, 0.0, w), uniform_in(rng, 0.0, h)};
    points.push_back(p);
  }

  Tensor image(Shape{1, 1, spec.height, spec.width});
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (float& v : image.data()) {
    const double n = spec.noise > 0.0 ? noise(rng) : 0.0;
    v = static_cast<float>(std::clamp(spec.background + n, 0.0, 1.0));
  }

  for (const Point& p : points) {
    const double radius = uniform_in(rng, spec.min_radius, spec.max_radius);
    const auto intensity = static_cast<float>(uniform_in(rng, spec.min_intensity, spec.max_intensity));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(p.x - radius)));
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(p.y - radius)));
    const auto x1 = static_cast<std::size_t>(std::min(w - 1.0, std::ceil(p.x + radius)));
    const auto y1 = static_cast<std::size_t>(std::min(h - 1.0, std::ceil(p.y + radius)));
    for (std::size_t y = y0; y <= y1; ++y) {
      for (std::size_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - p.x;
        const double dy = static_cast<double>(y) + 0.5 - p.y;
        if (dx * dx + dy * dy > radius * radius) continue;
        float& v = image.at(0, 0, y, x);
        v = std::max(v, intensity);
      }
    }
  }

  return Scene{std::move(image), HeadAnnotations{spec.height, spec.width, std::move(points)},
               "synth_" + std::to_string(spec.seed)};
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw DatasetError(Kind::malformed, path.string() + ": manifest must be a JSON list");
  std::vector<ManifestEntry> entries;
  for (const json& e : j) {
    try {
      fs::path annotation = e.at("annotation").get<std::string>();
      if (annotation.is_relative()) annotation = path.parent_path() / annotation;
      std::string split = e.at("split").get<std::string>();
      if (split != "train" && split != "val" && split != "test") {
        throw DatasetError(Kind::malformed, path.string() + ": unknown split '" + split + "'");
      }
      entries.push_back({std::move(annotation), std::move(split)});
    } catch (const json::exception& ex) {
      throw DatasetError(Kind::malformed, path.string() + ": " + ex.what());
    }
  }
  return entries;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  json j = json::array();
  for (const ManifestEntry& e : entries) j.push_back({{"annotation", e.annotation.generic_string()}, {"split", e.split}});
  std::ofstream out(path);
  if (!out) throw DatasetError(Kind::missing_file, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<Scene> load_split(const fs::path& manifest, std::string_view split, std::size_t channels) {
  std::vector<Scene> scenes;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    if (e.split == split) scenes.push_back(load_scene(e.annotation, channels));
  }
  return scenes;
}

std::vector<Sample> prepare_samples(std::span<const Scene> scenes, std::size_t factor, const KernelSpec& kernel) {
  std::vector<Sample> samples;
  samples.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    const DensityMap full = render_density(scene.annotations, kernel);
    samples.push_back({&scene, factor == 1 ? full : downsample_preserving_count(full, factor)});
  }
  return samples;
}

std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw InvalidArgument("make_batches: batch_size must be >= 1");
  if (samples.empty()) return {};
  const Shape image_shape = samples.front().scene->image.shape();
  const DensityMap& gt0 = samples.front().gt;
  for (const Sample& s : samples) {
    if (s.scene->image.shape() != image_shape || s.gt.height != gt0.height || s.gt.width != gt0.width) {
      throw InvalidArgument("make_batches: scene " + s.scene->id + " has shape " +
                            s.scene->image.shape().to_string() + " but the batch uses " +
                            image_shape.to_string() + "; crop all scenes to one size");
    }
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch batch{Tensor(Shape{n, image_shape.c, image_shape.h, image_shape.w}),
                Tensor(Shape{n, 1, gt0.height, gt0.width}), {}, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = samples[order[start + i]];
      const auto img = s.scene->image.sample(0);
      std::copy(img.begin(), img.end(), batch.images.sample(i).begin());
      std::copy(s.gt.raster.begin(), s.gt.raster.end(), batch.gt_density.sample(i).begin());
      batch.members.push_back(order[start + i]);
      batch.head_count += s.scene->head_count();
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Batch> make_batches(std::span<const Scene> scenes, std::size_t batch_size, std::size_t factor,
                                const KernelSpec& kernel, std::uint64_t shuffle_seed) {
  const std::vector<Sample> samples = prepare_samples(scenes, factor, kernel);
  return make_batches(samples, batch_size, shuffle_seed);
}

}  // namespace ccnn
