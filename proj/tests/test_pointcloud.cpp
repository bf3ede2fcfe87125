#include <gtest/gtest.h>

#include <random>

#include "any2point/error.hpp"
#include "any2point/pointcloud.hpp"
#include "oracles.hpp"

namespace a2p {
namespace {

TEST(Normalize, CentroidAtOriginAndFarthestPointOnUnitSphere) {
  std::mt19937_64 rng(3);
  const Coords raw = oracle::random_coords(100, rng, -5.0, 9.0);
  const Coords c = normalize_to_unit_sphere(raw);
  EXPECT_LT(c.colwise().mean().norm(), 1e-14);
  EXPECT_NEAR(c.rowwise().norm().maxCoeff(), 1.0, 1e-15);
}

TEST(Normalize, RejectsDegenerateClouds) {
  Coords same(4, 3);
  same.setConstant(0.5);
  EXPECT_THROW(normalize_to_unit_sphere(same), DegenerateCloud);
  EXPECT_THROW(normalize_to_unit_sphere(Coords(0, 3)), DegenerateCloud);
  Coords bad = Coords::Zero(3, 3);
  bad(1, 2) = std::nan("");
  EXPECT_THROW(normalize_to_unit_sphere(bad), DegenerateCloud);
}

TEST(Fps, MatchesBruteForceOnContinuousClouds) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const int n = 8 + static_cast<int>(rng() % 120);
    const int m = 1 + static_cast<int>(rng() % n);
    const Coords c = oracle::random_coords(n, rng);
    EXPECT_EQ(fps(c, m), oracle::fps(c, m)) << "n=" << n << " m=" << m;
  }
}

TEST(Fps, TiesGoToLowestIndex) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const int n = 8 + static_cast<int>(rng() % 60);
    const Coords c = oracle::lattice_coords(n, rng, 1);
    EXPECT_EQ(fps(c, n), oracle::fps(c, n));
  }
}

TEST(Fps, PicksEveryIndexOnceWhenMEqualsN) {
  std::mt19937_64 rng(13);
  const Coords c = oracle::lattice_coords(30, rng, 1);  // many duplicate points
  std::vector<int> p = fps(c, 30);
  std::sort(p.begin(), p.end());
  for (int i = 0; i < 30; ++i) EXPECT_EQ(p[i], i);
}

TEST(Fps, CountOutOfRange) {
  Coords c = Coords::Random(5, 3);
  EXPECT_THROW(fps(c, 0), InvalidCount);
  EXPECT_THROW(fps(c, 6), InvalidCount);
}

TEST(Knn, MatchesStableSortIncludingTies) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    const int n = 4 + static_cast<int>(rng() % 80);
    const int k = 1 + static_cast<int>(rng() % n);
    const bool lattice = t % 2 == 0;
    const Coords ref = lattice ? oracle::lattice_coords(n, rng, 2) : oracle::random_coords(n, rng);
    const Coords q = lattice ? oracle::lattice_coords(7, rng, 2) : oracle::random_coords(7, rng);
    const IndexTable got = knn(q, ref, k);
    const auto want = oracle::knn(q, ref, k);
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < k; ++j) ASSERT_EQ(got(i, j), want[i][j]) << "t=" << t;
    }
  }
}

TEST(Knn, SelfQueryReturnsSelfFirst) {
  std::mt19937_64 rng(22);
  const Coords c = oracle::random_coords(40, rng);
  const IndexTable t = knn(c, c, 3);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(t(i, 0), i);
}

TEST(Knn, InvalidK) {
  const Coords c = Coords::Random(5, 3);
  EXPECT_THROW(knn(c, c, 0), InvalidK);
  EXPECT_THROW(knn(c, c, 6), InvalidK);
}

TEST(Augment, DeterministicForASeed) {
  PointCloud cloud{Coords::Random(20, 3), 2};
  AugmentConfig cfg;
  std::mt19937_64 a(5), b(5);
  const PointCloud x = augment(cloud, cfg, a);
  const PointCloud y = augment(cloud, cfg, b);
  EXPECT_EQ(x.points, y.points);
  EXPECT_EQ(x.label, 2);
}

TEST(Augment, YawScaleShiftPreservesPairwiseGeometryUpToScale) {
  std::mt19937_64 rng(6);
  PointCloud cloud{oracle::random_coords(10, rng), std::nullopt};
  AugmentConfig cfg;
  cfg.scale_lo = cfg.scale_hi = 1.5;
  const PointCloud out = augment(cloud, cfg, rng);
  for (int i = 1; i < 10; ++i) {
    const double before = (cloud.points.row(i) - cloud.points.row(0)).norm();
    const double after = (out.points.row(i) - out.points.row(0)).norm();
    EXPECT_NEAR(after, 1.5 * before, 1e-12);
    // rotation is about y, so height differences only scale
    EXPECT_NEAR(out.points(i, 1) - out.points(0, 1),
                1.5 * (cloud.points(i, 1) - cloud.points(0, 1)), 1e-12);
  }
}

TEST(Augment, RejectsBadRanges) {
  PointCloud cloud{Coords::Random(4, 3), std::nullopt};
  std::mt19937_64 rng(1);
  AugmentConfig cfg;
  cfg.scale_lo = 2.0;
  cfg.scale_hi = 1.0;
  EXPECT_THROW(augment(cloud, cfg, rng), ConfigError);
}

TEST(Shapes, GenerationIsDeterministicAndNormalized) {
  for (ShapeKind k : all_shape_kinds()) {
    ShapeSpec s{k, 128, 0.01, 77};
    const PointCloud a = generate_shape(s);
    const PointCloud b = generate_shape(s);
    EXPECT_EQ(a.points, b.points);
    EXPECT_EQ(a.label, static_cast<int>(k));
    EXPECT_NEAR(a.points.rowwise().norm().maxCoeff(), 1.0, 1e-14);
  }
}

TEST(Shapes, SurfaceSamplesLieOnTheirPrimitive) {
  ShapeSpec s{ShapeKind::kSphere, 64, 0.0, 1};
  const Coords sphere = sample_shape_surface(s);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(sphere.row(i).norm(), 1.0, 1e-12);
  s.kind = ShapeKind::kCube;
  const Coords cube = sample_shape_surface(s);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(cube.row(i).cwiseAbs().maxCoeff(), 1.0, 1e-15);
}

TEST(Shapes, NamesRoundTrip) {
  for (ShapeKind k : all_shape_kinds()) EXPECT_EQ(parse_shape_kind(shape_name(k)), k);
  EXPECT_THROW(parse_shape_kind("dodecahedron"), ConfigError);
}

}  // namespace
}  // namespace a2p
