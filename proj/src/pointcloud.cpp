#include "any2point/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "any2point/error.hpp"

namespace a2p {

void AugmentConfig::validate() const {
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) {
    throw ConfigError("augment scale range must satisfy 0 < lo <= hi");
  }
  if (!(translation >= 0.0)) {
    throw ConfigError("augment translation bound must be >= 0");
  }
}

const std::vector<ShapeKind>& all_shape_kinds() {
  static const std::vector<ShapeKind> kinds = {ShapeKind::kSphere, ShapeKind::kCube,
                                               ShapeKind::kTorus, ShapeKind::kCylinder,
                                               ShapeKind::kCone};
  return kinds;
}

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kTorus: return "torus";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kCone: return "cone";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (ShapeKind k : all_shape_kinds()) {
    if (shape_name(k) == name) return k;
  }
  throw ConfigError("unknown shape class '" + name +
                    "' (expected sphere, cube, torus, cylinder or cone)");
}

Coords normalize_to_unit_sphere(const Coords& points) {
  if (points.rows() < 1) throw DegenerateCloud("empty cloud");
  if (!points.allFinite()) throw DegenerateCloud("non-finite coordinate");
  const Eigen::RowVector3d centroid = points.colwise().mean();
  Coords centered = points.rowwise() - centroid;
  const double radius = centered.rowwise().norm().maxCoeff();
  if (!(radius > 0.0)) throw DegenerateCloud("all points coincide");
  centered /= radius;
  return centered;
}

PointCloud normalize_to_unit_sphere(const PointCloud& cloud) {
  return PointCloud{normalize_to_unit_sphere(cloud.points), cloud.label};
}

std::vector<int> fps(const Coords& points, int m) {
  const int n = static_cast<int>(points.rows());
  if (m < 1 || m > n) {
    throw InvalidCount("fps asked for " + std::to_string(m) + " of " + std::to_string(n) +
                       " points");
  }
  std::vector<int> picked;
  picked.reserve(m);

  const Eigen::RowVector3d centroid = points.colwise().mean();
  int first = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (points.row(i) - centroid).squaredNorm();
    if (d > best) {
      best = d;
      first = i;
    }
  }
  picked.push_back(first);

  // -1 marks already-picked rows so duplicates can never be re-selected.
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  min_dist[first] = -1.0;
  int last = first;
  while (static_cast<int>(picked.size()) < m) {
    int next = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_dist[i] < 0.0) continue;
      const double d = (points.row(i) - points.row(last)).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > far) {
        far = min_dist[i];
        next = i;
      }
    }
    picked.push_back(next);
    min_dist[next] = -1.0;
    last = next;
  }
  return picked;
}

IndexTable knn(const Coords& queries, const Coords& reference, int k) {
  const int n_ref = static_cast<int>(reference.rows());
  if (k < 1 || k > n_ref) {
    throw InvalidK("k=" + std::to_string(k) + " with " + std::to_string(n_ref) +
                   " reference points");
  }
  IndexTable out(queries.rows(), k);
  std::vector<std::pair<double, int>> dist(n_ref);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (int r = 0; r < n_ref; ++r) {
      dist[r] = {(reference.row(r) - queries.row(q)).squaredNorm(), r};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j) out(q, j) = dist[j].second;
  }
  return out;
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * unit(rng);
  Eigen::RowVector3d shift;
  for (int a = 0; a < 3; ++a) shift[a] = cfg.translation * (2.0 * unit(rng) - 1.0);
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  if (cfg.rotation) {
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    const double c = std::cos(theta), s = std::sin(theta);
    rot << c, 0, s, 0, 1, 0, -s, 0, c;
  }
  PointCloud out;
  out.label = cloud.label;
  out.points = (cloud.points * rot.transpose() * scale).rowwise() + shift;
  return out;
}

namespace {

Vec3 sphere_sample(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

Vec3 cube_sample(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int f = face(rng);
  Vec3 p(u(rng), u(rng), u(rng));
  p[f / 2] = (f % 2 == 0) ? 1.0 : -1.0;
  return p;
}

Vec3 torus_sample(std::mt19937_64& rng) {
  constexpr double kMajor = 1.0, kMinor = 0.35;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double theta = 2.0 * std::numbers::pi * u(rng);
    const double phi = 2.0 * std::numbers::pi * u(rng);
    // area element is proportional to (R + r cos phi)
    if (u(rng) * (kMajor + kMinor) > kMajor + kMinor * std::cos(phi)) continue;
    const double ring = kMajor + kMinor * std::cos(phi);
    return Vec3(ring * std::cos(theta), kMinor * std::sin(phi), ring * std::sin(theta));
  }
}

Vec3 cylinder_sample(std::mt19937_64& rng) {
  constexpr double kRadius = 0.5, kHalfHeight = 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double side = 2.0 * std::numbers::pi * kRadius * 2.0 * kHalfHeight;
  const double cap = std::numbers::pi * kRadius * kRadius;
  const double pick = u(rng) * (side + 2.0 * cap);
  const double theta = 2.0 * std::numbers::pi * u(rng);
  if (pick < side) {
    const double y = kHalfHeight * (2.0 * u(rng) - 1.0);
    return Vec3(kRadius * std::cos(theta), y, kRadius * std::sin(theta));
  }
  const double r = kRadius * std::sqrt(u(rng));
  const double y = (pick < side + cap) ? kHalfHeight : -kHalfHeight;
  return Vec3(r * std::cos(theta), y, r * std::sin(theta));
}

Vec3 cone_sample(std::mt19937_64& rng) {
  // apex at y=+1, unit-radius base at y=-1
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lateral = std::numbers::pi * std::sqrt(5.0);
  const double base = std::numbers::pi;
  const double theta = 2.0 * std::numbers::pi * u(rng);
  if (u(rng) * (lateral + base) < lateral) {
    const double t = std::sqrt(u(rng));
    return Vec3(t * std::cos(theta), 1.0 - 2.0 * t, t * std::sin(theta));
  }
  const double r = std::sqrt(u(rng));
  return Vec3(r * std::cos(theta), -1.0, r * std::sin(theta));
}

}  // namespace

Coords sample_shape_surface(const ShapeSpec& spec) {
  if (spec.n_points < 8) throw ConfigError("shape needs at least 8 points");
  if (!(spec.jitter_sigma >= 0.0)) throw ConfigError("jitter sigma must be >= 0");
  std::mt19937_64 rng(spec.seed);
  Coords pts(spec.n_points, 3);
  // Centrally symmetric primitives are sampled in antipodal pairs so the
  // centroid is exactly the shape center.
  const bool symmetric = spec.kind != ShapeKind::kCone;
  for (int i = 0; i < spec.n_points; ++i) {
    if (symmetric && i % 2 == 1) {
      pts.row(i) = -pts.row(i - 1);
      continue;
    }
    Vec3 p;
    switch (spec.kind) {
      case ShapeKind::kSphere: p = sphere_sample(rng); break;
      case ShapeKind::kCube: p = cube_sample(rng); break;
      case ShapeKind::kTorus: p = torus_sample(rng); break;
      case ShapeKind::kCylinder: p = cylinder_sample(rng); break;
      case ShapeKind::kCone: p = cone_sample(rng); break;
    }
    pts.row(i) = p.transpose();
  }
  return pts;
}

PointCloud generate_shape(const ShapeSpec& spec) {
  Coords pts = sample_shape_surface(spec);
  if (spec.jitter_sigma > 0.0) {
    // separate stream so jitter does not shift the surface samples
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> g(0.0, spec.jitter_sigma);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] += g(rng);
  }
  PointCloud cloud{normalize_to_unit_sphere(pts), static_cast<int>(spec.kind)};
  return cloud;
}

}  // namespace a2p
