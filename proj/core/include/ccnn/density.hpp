#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ccnn {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Head positions of one scene, in pixel coordinates of a height x width image.
struct HeadAnnotations {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Point> points;

  /// Throws InvalidArgument naming the first point outside [0,width) x [0,height).
  void validate() const;
};

/// How each head's Gaussian width is chosen.
struct KernelSpec {
  enum class Mode { fixed, adaptive };

  Mode mode = Mode::fixed;
  double sigma_fixed = 15.0;
  /// Adaptive mode: sigma_i = beta * (mean distance to k nearest heads).
  double beta = 0.3;
  int k_neighbors = 3;
  double truncation_radius_sigmas = 4.0;

  /// Throws ConfigError on non-positive widths, k < 1 or truncation < 2.
  void validate() const;
};

/// Single-channel raster; `scale` is the downsampling factor relative to the source image.
struct DensityMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint32_t scale = 1;
  std::vector<float> raster;

  static DensityMap zeros(std::size_t height, std::size_t width, std::uint32_t scale = 1);

  float at(std::size_t y, std::size_t x) const noexcept { return raster[y * width + x]; }
  /// Sum of all cells, accumulated in double.
  double sum() const noexcept;

  friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

/// Mean Euclidean distance from points[index] to its k nearest other points.
///
/// Uses brute-force pairwise distances. With fewer than k other points the
/// mean runs over all of them; with no other point at all returns nullopt.
std::optional<double> knn_mean_distance(std::span<const Point> points, std::size_t index, int k);

/// Per-head Gaussian widths used by render_density.
std::vector<double> head_sigmas(const HeadAnnotations& ann, const KernelSpec& spec);

/// Sum of per-head Gaussian stamps, each renormalised to unit mass over its
/// truncated, image-clipped support.
DensityMap render_density(const HeadAnnotations& ann, const KernelSpec& spec);

/// Sum-pools factor x factor blocks. factor must be 2, 4 or 8 and divide both dims.
DensityMap downsample_preserving_count(const DensityMap& dm, std::size_t factor);

/// CDM1 encoding: "CDM1", u32 height, u32 width, u32 scale, height*width f32, all little-endian.
std::vector<std::uint8_t> encode_cdm(const DensityMap& dm);
DensityMap decode_cdm(std::span<const std::uint8_t> bytes);

void write_cdm(const std::filesystem::path& path, const DensityMap& dm);
DensityMap read_cdm(const std::filesystem::path& path);

}  // namespace ccnn
