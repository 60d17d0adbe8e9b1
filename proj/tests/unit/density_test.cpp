#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ccnn/density.hpp"
#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

KernelSpec fixed_sigma(double sigma) {
  KernelSpec spec;
  spec.mode = KernelSpec::Mode::fixed;
  spec.sigma_fixed = sigma;
  return spec;
}

HeadAnnotations scene(std::size_t h, std::size_t w, std::vector<Point> pts) { return {h, w, std::move(pts)}; }

TEST(KnnMeanDistance, CollinearPoints) {
  const std::vector<Point> pts{{0, 0}, {10, 0}, {20, 0}};
  EXPECT_DOUBLE_EQ(*knn_mean_distance(pts, 0, 2), 15.0);
}

TEST(KnnMeanDistance, CoincidentPoints) {
  const std::vector<Point> pts{{4, 4}, {4, 4}};
  EXPECT_DOUBLE_EQ(*knn_mean_distance(pts, 0, 1), 0.0);
}

TEST(KnnMeanDistance, ThreeFourFive) {
  const std::vector<Point> pts{{0, 0}, {3, 4}};
  EXPECT_DOUBLE_EQ(*knn_mean_distance(pts, 0, 1), 5.0);
}

TEST(KnnMeanDistance, FewerPointsThanKUsesAllOthers) {
  const std::vector<Point> pts{{0, 0}, {3, 4}, {6, 8}};
  EXPECT_DOUBLE_EQ(*knn_mean_distance(pts, 0, 5), 7.5);
}

TEST(KnnMeanDistance, LonePointHasNoNeighbours) {
  const std::vector<Point> pts{{1, 1}};
  EXPECT_FALSE(knn_mean_distance(pts, 0, 3).has_value());
}

TEST(KnnMeanDistance, MatchesSortedBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Point> pts(40);
  for (auto& p : pts) p = {u(rng), u(rng)};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) d.push_back(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
    std::sort(d.begin(), d.end());
    const double expected = (d[0] + d[1] + d[2]) / 3.0;
    EXPECT_NEAR(*knn_mean_distance(pts, i, 3), expected, 1e-12);
  }
}

TEST(KernelSpec, RejectsBadFields) {
  KernelSpec s;
  s.truncation_radius_sigmas = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = KernelSpec{};
  s.sigma_fixed = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = KernelSpec{};
  s.k_neighbors = 0;
  EXPECT_NO_THROW(s.validate());  // k only governs adaptive mode
  s.mode = KernelSpec::Mode::adaptive;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(HeadAnnotations, OutOfBoundsPointRejected) {
  EXPECT_THROW(scene(10, 10, {{10.0, 2.0}}).validate(), InvalidArgument);
  EXPECT_THROW(scene(10, 10, {{2.0, -0.1}}).validate(), InvalidArgument);
  EXPECT_NO_THROW(scene(10, 10, {{9.99, 0.0}}).validate());
}

TEST(RenderDensity, EmptySceneIsZero) {
  const DensityMap dm = render_density(scene(32, 48, {}), KernelSpec{});
  EXPECT_EQ(dm.height, 32u);
  EXPECT_EQ(dm.width, 48u);
  EXPECT_EQ(dm.sum(), 0.0);
}

TEST(RenderDensity, CenteredHeadHasUnitMass) {
  const DensityMap dm = render_density(scene(128, 128, {{64.0, 64.0}}), fixed_sigma(15.0));
  EXPECT_NEAR(dm.sum(), 1.0, 1e-4);
}

TEST(RenderDensity, StampMatchesIndependentGaussian) {
  // Oracle: unnormalised Gaussian at pixel centres inside the 4-sigma disk, divided by its own sum.
  const double cx = 30.3, cy = 27.8, sigma = 4.0;
  const DensityMap dm = render_density(scene(64, 64, {{cx, cy}}), fixed_sigma(sigma));
  std::vector<double> g(64 * 64, 0.0);
  double z = 0.0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > 16.0 * sigma * sigma) continue;
      g[y * 64 + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      z += g[y * 64 + x];
    }
  for (std::size_t i = 0; i < g.size(); ++i) ASSERT_NEAR(dm.raster[i], g[i] / z, 1e-7) << i;
}

TEST(RenderDensity, CornerHeadRenormalisedToUnitMass) {
  const DensityMap dm = render_density(scene(40, 40, {{0.2, 0.1}}), fixed_sigma(15.0));
  EXPECT_NEAR(dm.sum(), 1.0, 1e-5);
}

TEST(RenderDensity, FiveInteriorHeadsEqualSumOfSingleStamps) {
  const std::vector<Point> heads{{70, 70}, {128, 90}, {180, 180}, {100, 150}, {160, 70.5}};
  const KernelSpec spec = fixed_sigma(15.0);
  const DensityMap all = render_density(scene(256, 256, heads), spec);
  double singles = 0.0;
  for (const Point& p : heads) singles += render_density(scene(256, 256, {p}), spec).sum();
  EXPECT_NEAR(singles, 5.0, 1e-3);
  EXPECT_NEAR(all.sum(), singles, 1e-3);
  EXPECT_NEAR(all.sum(), 5.0, 1e-3);
}

TEST(RenderDensity, NonNegativeAndMassBoundedOnRandomScenes) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = rng() % 60;
    std::uniform_real_distribution<double> ux(0, 95.999), uy(0, 63.999);
    HeadAnnotations ann = scene(64, 96, {});
    for (std::size_t i = 0; i < n; ++i) ann.points.push_back({ux(rng), uy(rng)});
    for (auto mode : {KernelSpec::Mode::fixed, KernelSpec::Mode::adaptive}) {
      KernelSpec spec;
      spec.mode = mode;
      const DensityMap dm = render_density(ann, spec);
      for (float v : dm.raster) ASSERT_GE(v, 0.0f);
      EXPECT_LE(std::abs(dm.sum() - double(n)), 0.005 * double(n) + 1e-4);
    }
  }
}

TEST(RenderDensity, TranslationCovariance) {
  const KernelSpec spec = fixed_sigma(3.0);  // support radius 12
  const std::vector<Point> base{{20.25, 18.5}, {31.0, 22.75}, {25.5, 30.0}};
  const int ox = 7, oy = 5;
  std::vector<Point> moved;
  for (const Point& p : base) moved.push_back({p.x + ox, p.y + oy});
  const DensityMap a = render_density(scene(64, 64, base), spec);
  const DensityMap b = render_density(scene(64, 64, moved), spec);
  for (int y = 0; y + oy < 64; ++y)
    for (int x = 0; x + ox < 64; ++x) ASSERT_EQ(a.at(y, x), b.at(y + oy, x + ox)) << y << "," << x;
}

TEST(RenderDensity, AdditiveOverDisjointSets) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 79.999);
  for (int trial = 0; trial < 10; ++trial) {
    HeadAnnotations a = scene(80, 80, {}), b = scene(80, 80, {}), both = scene(80, 80, {});
    for (int i = 0; i < 8; ++i) a.points.push_back({u(rng), u(rng)});
    for (int i = 0; i < 5; ++i) b.points.push_back({u(rng), u(rng)});
    both.points = a.points;
    both.points.insert(both.points.end(), b.points.begin(), b.points.end());
    const KernelSpec spec = fixed_sigma(6.0);
    const DensityMap ra = render_density(a, spec), rb = render_density(b, spec), rab = render_density(both, spec);
    for (std::size_t i = 0; i < rab.raster.size(); ++i)
      ASSERT_NEAR(rab.raster[i], double(ra.raster[i]) + rb.raster[i], 1e-5);
  }
}

TEST(HeadSigmas, EquidistantHeadsGetBetaTimesDistance) {
  // Equilateral triangle with side D: every head's two neighbours sit at D.
  const double d = 12.0;
  HeadAnnotations ann = scene(100, 100, {{40, 40}, {40 + d, 40}, {40 + d / 2, 40 + d * std::sqrt(3.0) / 2}});
  KernelSpec spec;
  spec.mode = KernelSpec::Mode::adaptive;
  spec.k_neighbors = 2;
  spec.beta = 0.3;
  for (double s : head_sigmas(ann, spec)) EXPECT_NEAR(s, 0.3 * d, 1e-9);
}

TEST(HeadSigmas, AdaptiveClampedAndLoneHeadFallsBack) {
  KernelSpec spec;
  spec.mode = KernelSpec::Mode::adaptive;
  const auto coincident = head_sigmas(scene(50, 50, {{10, 10}, {10, 10}}), spec);
  EXPECT_DOUBLE_EQ(coincident[0], 0.5);
  const auto far = head_sigmas(scene(100, 100, {{0, 0}, {99, 99}}), spec);
  const double diag_quarter = std::hypot(100.0, 100.0) / 4.0;
  EXPECT_LE(far[0], diag_quarter + 1e-12);
  const auto lone = head_sigmas(scene(50, 50, {{10, 10}}), spec);
  EXPECT_DOUBLE_EQ(lone[0], spec.sigma_fixed);
}

TEST(Downsample, TwoByTwoToSum) {
  DensityMap dm = DensityMap::zeros(2, 2);
  dm.raster = {1, 2, 3, 4};
  const DensityMap out = downsample_preserving_count(dm, 2);
  EXPECT_EQ(out.height, 1u);
  EXPECT_EQ(out.raster, std::vector<float>{10});
  EXPECT_EQ(out.scale, 2u);
}

TEST(Downsample, InvalidFactorOrDims) {
  EXPECT_THROW(downsample_preserving_count(DensityMap::zeros(8, 8), 3), InvalidArgument);
  EXPECT_THROW(downsample_preserving_count(DensityMap::zeros(8, 12), 8), InvalidArgument);
  EXPECT_THROW(downsample_preserving_count(DensityMap::zeros(6, 8), 4), InvalidArgument);
}

DensityMap random_map(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  DensityMap dm = DensityMap::zeros(h, w);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : dm.raster) v = u(rng);
  return dm;
}

TEST(Downsample, ConservesMass) {
  std::mt19937_64 rng(19);
  for (std::size_t f : {2u, 4u, 8u}) {
    const DensityMap dm = random_map(48, 64, rng);
    EXPECT_NEAR(downsample_preserving_count(dm, f).sum(), dm.sum(), 1e-9 * dm.sum()) << f;
  }
}

TEST(Downsample, TwiceByTwoEqualsOnceByFour) {
  std::mt19937_64 rng(23);
  const DensityMap dm = random_map(32, 40, rng);
  const DensityMap twice = downsample_preserving_count(downsample_preserving_count(dm, 2), 2);
  const DensityMap once = downsample_preserving_count(dm, 4);
  ASSERT_EQ(twice.raster.size(), once.raster.size());
  EXPECT_EQ(twice.scale, once.scale);
  for (std::size_t i = 0; i < once.raster.size(); ++i) EXPECT_NEAR(twice.raster[i], once.raster[i], 1e-6);
}

TEST(Downsample, CommutesWithAddition) {
  std::mt19937_64 rng(29);
  const DensityMap a = random_map(16, 16, rng), b = random_map(16, 16, rng);
  DensityMap ab = a;
  for (std::size_t i = 0; i < ab.raster.size(); ++i) ab.raster[i] += b.raster[i];
  const DensityMap da = downsample_preserving_count(a, 8), db = downsample_preserving_count(b, 8);
  const DensityMap dab = downsample_preserving_count(ab, 8);
  for (std::size_t i = 0; i < dab.raster.size(); ++i) EXPECT_NEAR(dab.raster[i], da.raster[i] + db.raster[i], 1e-5);
}

TEST(Cdm, HeaderLayout) {
  DensityMap dm = DensityMap::zeros(2, 3, 8);
  dm.raster = {0, 1, 2, 3, 4, 5.5f};
  const auto bytes = encode_cdm(dm);
  ASSERT_EQ(bytes.size(), 16u + 6u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CDM1");
  EXPECT_EQ(bytes[4], 2);  // height, little-endian
  EXPECT_EQ(bytes[8], 3);  // width
  EXPECT_EQ(bytes[12], 8); // scale
  // 5.5f = 0x40B00000
  EXPECT_EQ(bytes[16 + 5 * 4 + 3], 0x40);
  EXPECT_EQ(bytes[16 + 5 * 4 + 2], 0xB0);
}

TEST(Cdm, RoundTripIsBitwise) {
  std::mt19937_64 rng(31);
  DensityMap dm = random_map(24, 17, rng);
  dm.scale = 4;
  dm.raster[3] = 1e-38f;
  const auto path = std::filesystem::temp_directory_path() / "ccnn_density_roundtrip.cdm";
  write_cdm(path, dm);
  const DensityMap back = read_cdm(path);
  EXPECT_EQ(back, dm);
  EXPECT_EQ(encode_cdm(back), encode_cdm(dm));
  std::filesystem::remove(path);
}

TEST(Cdm, RejectsBadMagicAndTruncation) {
  auto bytes = encode_cdm(DensityMap::zeros(2, 2));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_cdm(bad), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_cdm(bytes), FormatError);
}

}  // namespace
}  // namespace ccnn
