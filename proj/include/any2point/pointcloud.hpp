#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "any2point/tensor.hpp"

namespace a2p {

struct PointCloud {
  Coords points;
  std::optional<int> label;

  int size() const { return static_cast<int>(points.rows()); }
};

/// Sample-level augmentation. Rotation is about the vertical (y) axis.
struct AugmentConfig {
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double translation = 0.1;
  bool rotation = true;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class ShapeKind { kSphere, kCube, kTorus, kCylinder, kCone };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  int n_points = 512;
  double jitter_sigma = 0.0;
  std::uint64_t seed = 0;
};

const std::vector<ShapeKind>& all_shape_kinds();
std::string shape_name(ShapeKind kind);
/// Throws ConfigError for names outside the five known primitives.
ShapeKind parse_shape_kind(const std::string& name);

/// Centers on the centroid and scales so the farthest point has norm 1.
PointCloud normalize_to_unit_sphere(const PointCloud& cloud);
Coords normalize_to_unit_sphere(const Coords& points);

/// Greedy farthest point sampling. The first pick is the point farthest from
/// the centroid; every tie goes to the lowest index.
std::vector<int> fps(const Coords& points, int m);

/// k nearest reference rows for every query row, ascending by distance with
/// ties broken by lower index.
IndexTable knn(const Coords& queries, const Coords& reference, int k);

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Surface samples of the primitive before jitter and normalization.
Coords sample_shape_surface(const ShapeSpec& spec);
/// Jittered, unit-sphere-normalized surface samples; label = kind index.
PointCloud generate_shape(const ShapeSpec& spec);

}  // namespace a2p
