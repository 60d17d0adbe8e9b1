#include "ccnn/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "byte_io.hpp"
#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

constexpr std::string_view kCdmMagic = "CDM1";
constexpr double kMinAdaptiveSigma = 0.5;

std::string point_string(const Point& p) {
  return "(" + std::to_string(p.x) + ", " + std::to_string(p.y) + ")";
}

// Adds one unit-mass Gaussian stamp centred at `head` into `acc`.
void stamp_head(std::vector<double>& acc, std::size_t height, std::size_t width, const Point& head,
                double sigma, double truncation) {
  const double radius = truncation * sigma;
  const double r2 = radius * radius;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  // Pixel p covers [p, p+1); its centre is p + 0.5.
  const auto lo = [](double c, double r) { return static_cast<std::ptrdiff_t>(std::floor(c - r - 0.5)); };
  const auto hi = [](double c, double r) { return static_cast<std::ptrdiff_t>(std::ceil(c + r - 0.5)); };
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, lo(head.x, radius));
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(width) - 1, hi(head.x, radius));
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, lo(head.y, radius));
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1, hi(head.y, radius));
  if (x0 > x1 || y0 > y1) return;

  const auto cols = static_cast<std::size_t>(x1 - x0 + 1);
  std::vector<double> weights(static_cast<std::size_t>(y1 - y0 + 1) * cols, 0.0);
  double mass = 0.0;
  for (std::ptrdiff_t y = y0; y <= y1; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - head.y;
    for (std::ptrdiff_t x = x0; x <= x1; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - head.x;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r2) continue;
      const double g = std::exp(-d2 * inv_two_var);
      weights[static_cast<std::size_t>(y - y0) * cols + static_cast<std::size_t>(x - x0)] = g;
      mass += g;
    }
  }
  if (mass <= 0.0) return;
  for (std::ptrdiff_t y = y0; y <= y1; ++y) {
    double* row = acc.data() + static_cast<std::size_t>(y) * width;
    const double* wrow = weights.data() + static_cast<std::size_t>(y - y0) * cols;
    for (std::size_t i = 0; i < cols; ++i) row[static_cast<std::size_t>(x0) + i] += wrow[i] / mass;
  }
}

}  // namespace

void HeadAnnotations::validate() const {
  for (const Point& p : points) {
    const bool inside = p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(width) &&
                        p.y < static_cast<double>(height);
    if (!inside || !std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw InvalidArgument("head " + point_string(p) + " lies outside the " + std::to_string(width) +
                            "x" + std::to_string(height) + " image");
    }
  }
}

void KernelSpec::validate() const {
  if (mode == Mode::adaptive && !(beta > 0.0)) throw ConfigError("kernel spec: beta must be > 0");
  if (mode == Mode::adaptive && k_neighbors < 1) throw ConfigError("kernel spec: k_neighbors must be >= 1");
  // Adaptive mode still falls back to sigma_fixed for a lone head.
  if (!(sigma_fixed > 0.0)) throw ConfigError("kernel spec: sigma_fixed must be > 0");
  if (!(truncation_radius_sigmas >= 2.0)) {
    throw ConfigError("kernel spec: truncation_radius_sigmas must be >= 2");
  }
}

DensityMap DensityMap::zeros(std::size_t height, std::size_t width, std::uint32_t scale) {
  return DensityMap{height, width, scale, std::vector<float>(height * width, 0.0f)};
}

double DensityMap::sum() const noexcept { return std::accumulate(raster.begin(), raster.end(), 0.0); }

std::optional<double> knn_mean_distance(std::span<const Point> points, std::size_t index, int k) {
  if (index >= points.size()) {
    throw InvalidArgument("knn_mean_distance: index " + std::to_string(index) + " out of range for " +
                          std::to_string(points.size()) + " points");
  }
  if (k < 1) throw InvalidArgument("knn_mean_distance: k must be >= 1");
  if (points.size() == 1) return std::nullopt;

  std::vector<double> distances;
  distances.reserve(points.size() - 1);
  const Point& origin = points[index];
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (j == index) continue;
    distances.push_back(std::hypot(points[j].x - origin.x, points[j].y - origin.y));
  }
  const std::size_t take = std::min(distances.size(), static_cast<std::size_t>(k));
  std::partial_sort(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(take), distances.end());
  double total = 0.0;
  for (std::size_t j = 0; j < take; ++j) total += distances[j];
  return total / static_cast<double>(take);
}

std::vector<double> head_sigmas(const HeadAnnotations& ann, const KernelSpec& spec) {
  spec.validate();
  std::vector<double> sigmas(ann.points.size(), spec.sigma_fixed);
  if (spec.mode == KernelSpec::Mode::fixed) return sigmas;

  const double diagonal = std::hypot(static_cast<double>(ann.height), static_cast<double>(ann.width));
  const double max_sigma = std::max(kMinAdaptiveSigma, diagonal / 4.0);
  for (std::size_t i = 0; i < ann.points.size(); ++i) {
    const auto mean = knn_mean_distance(ann.points, i, spec.k_neighbors);
    if (!mean) continue;  // lone head keeps sigma_fixed
    sigmas[i] = std::clamp(spec.beta * *mean, kMinAdaptiveSigma, max_sigma);
  }
  return sigmas;
}

DensityMap render_density(const HeadAnnotations& ann, const KernelSpec& spec) {
  ann.validate();
  const std::vector<double> sigmas = head_sigmas(ann, spec);
  std::vector<double> acc(ann.height * ann.width, 0.0);
  for (std::size_t i = 0; i < ann.points.size(); ++i) {
    stamp_head(acc, ann.height, ann.width, ann.points[i], sigmas[i], spec.truncation_radius_sigmas);
  }
  DensityMap dm = DensityMap::zeros(ann.height, ann.width, 1);
  std::transform(acc.begin(), acc.end(), dm.raster.begin(), [](double v) { return static_cast<float>(v); });
  return dm;
}

DensityMap downsample_preserving_count(const DensityMap& dm, std::size_t factor) {
  if (factor != 2 && factor != 4 && factor != 8) {
    throw InvalidArgument("downsample factor must be 2, 4 or 8, got " + std::to_string(factor));
  }
  if (dm.height % factor != 0 || dm.width % factor != 0) {
    throw InvalidArgument("downsample: " + std::to_string(dm.height) + "x" + std::to_string(dm.width) +
                          " is not divisible by " + std::to_string(factor));
  }
  const std::size_t oh = dm.height / factor;
  const std::size_t ow = dm.width / factor;
  std::vector<double> acc(oh * ow, 0.0);
  for (std::size_t y = 0; y < dm.height; ++y) {
    double* row = acc.data() + (y / factor) * ow;
    const float* src = dm.raster.data() + y * dm.width;
    for (std::size_t x = 0; x < dm.width; ++x) row[x / factor] += src[x];
  }
  DensityMap out = DensityMap::zeros(oh, ow, dm.scale * static_cast<std::uint32_t>(factor));
  std::transform(acc.begin(), acc.end(), out.raster.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

std::vector<std::uint8_t> encode_cdm(const DensityMap& dm) {
  if (dm.raster.size() != dm.height * dm.width) {
    throw InvalidArgument("density map raster does not match its dimensions");
  }
  std::vector<std::uint8_t> out;
  detail::put_bytes(out, kCdmMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(dm.height));
  detail::put_u32(out, static_cast<std::uint32_t>(dm.width));
  detail::put_u32(out, dm.scale);
  detail::put_f32s(out, dm.raster);
  return out;
}

DensityMap decode_cdm(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  std::string magic;
  if (!in.read_bytes(kCdmMagic.size(), magic) || magic != kCdmMagic) {
    throw FormatError("CDM1: bad magic");
  }
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t scale = 0;
  if (!in.read_u32(height) || !in.read_u32(width) || !in.read_u32(scale)) {
    throw FormatError("CDM1: truncated header");
  }
  if (scale == 0) throw FormatError("CDM1: scale must be >= 1");
  const std::size_t cells = static_cast<std::size_t>(height) * width;
  if (in.remaining() != cells * 4) {
    throw FormatError("CDM1: expected " + std::to_string(cells * 4) + " raster bytes, found " +
                      std::to_string(in.remaining()));
  }
  DensityMap dm = DensityMap::zeros(height, width, scale);
  in.read_f32s(dm.raster);
  return dm;
}

void write_cdm(const std::filesystem::path& path, const DensityMap& dm) {
  const auto bytes = encode_cdm(dm);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DensityMap read_cdm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cdm(bytes);
}

}  // namespace ccnn
