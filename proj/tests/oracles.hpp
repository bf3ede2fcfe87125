#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Written from the definitions, deliberately naive.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "any2point/projection.hpp"
#include "any2point/tensor.hpp"

namespace a2p::oracle {

inline double sq_dist(const Coords& a, int i, const Coords& b, int j) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

// Recomputes every min-distance from scratch on each pick.
inline std::vector<int> fps(const Coords& pts, int m) {
  const int n = static_cast<int>(pts.rows());
  double cx = 0, cy = 0, cz = 0;
  for (int i = 0; i < n; ++i) {
    cx += pts(i, 0);
    cy += pts(i, 1);
    cz += pts(i, 2);
  }
  Coords c(1, 3);
  c << cx / n, cy / n, cz / n;
  std::vector<int> picked;
  int first = 0;
  for (int i = 1; i < n; ++i) {
    if (sq_dist(pts, i, c, 0) > sq_dist(pts, first, c, 0)) first = i;
  }
  picked.push_back(first);
  while (static_cast<int>(picked.size()) < m) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (int p : picked) d = std::min(d, sq_dist(pts, i, pts, p));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

// Full stable sort of every reference point per query.
inline std::vector<std::vector<int>> knn(const Coords& q, const Coords& ref, int k) {
  std::vector<std::vector<int>> out;
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<int> idx(ref.rows());
    for (int j = 0; j < ref.rows(); ++j) idx[j] = j;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return sq_dist(ref, a, q, i) < sq_dist(ref, b, q, i); });
    idx.resize(k);
    out.push_back(idx);
  }
  return out;
}

// Group label per token; two tokens share a label iff their keys are equal.
template <typename Key>
std::vector<int> labels_from_keys(const std::vector<Key>& keys) {
  std::vector<int> label(keys.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (label[i] >= 0) continue;
    for (std::size_t j = i; j < keys.size(); ++j) {
      if (keys[j] == keys[i]) label[j] = next;
    }
    ++next;
  }
  return label;
}

// Same canonical labelling for a partition; -1 marks an uncovered or
// doubly-covered row.
inline std::vector<int> labels_from_partition(const Partition& p, int n) {
  std::vector<int> owner(n, -2);
  for (std::size_t g = 0; g < p.size(); ++g) {
    for (int i : p[g]) {
      if (i < 0 || i >= n) return std::vector<int>(n, -1);
      owner[i] = owner[i] == -2 ? static_cast<int>(g) : -1;
    }
  }
  for (int o : owner) {
    if (o < 0) return std::vector<int>(n, -1);
  }
  return labels_from_keys(owner);
}

inline std::vector<std::array<long, 3>> voxel_keys(const Coords& c, double grid) {
  std::vector<std::array<long, 3>> keys;
  for (int i = 0; i < c.rows(); ++i) {
    keys.push_back({static_cast<long>(std::floor((c(i, 0) + 1.0) / grid)),
                    static_cast<long>(std::floor((c(i, 1) + 1.0) / grid)),
                    static_cast<long>(std::floor((c(i, 2) + 1.0) / grid))});
  }
  return keys;
}

inline Mat voxel_mean(const Coords& c, const Mat& f, double grid) {
  const auto keys = voxel_keys(c, grid);
  Mat out = Mat::Zero(f.rows(), f.cols());
  for (int i = 0; i < f.rows(); ++i) {
    int count = 0;
    for (int j = 0; j < f.rows(); ++j) {
      if (keys[j] != keys[i]) continue;
      out.row(i) += f.row(j);
      ++count;
    }
    out.row(i) /= count;
  }
  return out;
}

// Table row addressed by token `p` in view j, derived from the view geometry.
inline int pe_row(const Vec3& p, int j, const ProjectionConfig& cfg) {
  const double theta = 2.0 * std::numbers::pi * j / cfg.m_views;
  if (cfg.mode == ProjectionMode::kLine1D) {
    const double s = std::cos(theta) * p.x() + std::sin(theta) * p.z();
    const double x = std::floor(0.5 * (s + 1.0) * cfg.line_length);
    return static_cast<int>(std::clamp<double>(x, 0, cfg.line_length - 1));
  }
  // azimuth about y, then elevation about x
  const double e = cfg.elevation_deg * std::numbers::pi / 180.0;
  const double x1 = std::cos(theta) * p.x() + std::sin(theta) * p.z();
  const double y1 = p.y();
  const double z1 = -std::sin(theta) * p.x() + std::cos(theta) * p.z();
  const double x2 = x1;
  const double y2 = std::cos(e) * y1 - std::sin(e) * z1;
  const double u = std::clamp(0.5 * (x2 + 1.0) * cfg.plane_width, 0.0,
                              std::nextafter(double(cfg.plane_width), 0.0));
  const double v = std::clamp(0.5 * (y2 + 1.0) * cfg.plane_height, 0.0,
                              std::nextafter(double(cfg.plane_height), 0.0));
  const int rows = cfg.plane_height / cfg.patch_size;
  const int cols = cfg.plane_width / cfg.patch_size;
  const int r = std::min(static_cast<int>(v) / cfg.patch_size, rows - 1);
  const int c = std::min(static_cast<int>(u) / cfg.patch_size, cols - 1);
  return r * cols + c;
}

inline Mat average_pe(const Coords& coords, const ProjectionConfig& cfg, const PETable& table) {
  Mat out = Mat::Zero(coords.rows(), table.dim());
  for (int i = 0; i < coords.rows(); ++i) {
    const Vec3 p = coords.row(i).transpose();
    for (int j = 0; j < cfg.m_views; ++j) out.row(i) += table.data.row(pe_row(p, j, cfg));
    out.row(i) /= cfg.m_views;
  }
  return out;
}

// Softmax over views of cosine(B_i, F_ij) / tau, term by term.
inline Mat ensemble_weights(const Mat& b, const std::vector<Mat>& views, double tau) {
  const int n = static_cast<int>(b.rows());
  const int m = static_cast<int>(views.size());
  Mat w(n, m);
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(m);
    for (int j = 0; j < m; ++j) {
      const double nb = b.row(i).norm(), nf = views[j].row(i).norm();
      s[j] = (nb < 1e-12 || nf < 1e-12) ? 0.0 : b.row(i).dot(views[j].row(i)) / (nb * nf) / tau;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += std::exp(s[j] - mx);
    for (int j = 0; j < m; ++j) w(i, j) = std::exp(s[j] - mx) / z;
  }
  return w;
}

inline Coords random_coords(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Coords c(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) c(i, a) = u(rng);
  }
  return c;
}

// Small integer lattice coordinates: plenty of exact distance ties.
inline Coords lattice_coords(int n, std::mt19937_64& rng, int extent = 3) {
  std::uniform_int_distribution<int> u(-extent, extent);
  Coords c(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) c(i, a) = u(rng);
  }
  return c;
}

inline Mat random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace a2p::oracle
