#include "any2point/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "any2point/error.hpp"

namespace a2p {

std::string mode_name(ProjectionMode mode) {
  return mode == ProjectionMode::kLine1D ? "1d" : "2d";
}

ProjectionMode parse_projection_mode(const std::string& name) {
  if (name == "1d" || name == "line") return ProjectionMode::kLine1D;
  if (name == "2d" || name == "plane") return ProjectionMode::kPlane2D;
  throw ConfigError("unknown projection mode '" + name + "' (expected 1d or 2d)");
}

void ProjectionConfig::validate() const {
  if (m_views < 1) throw ConfigError("m_views must be >= 1");
  if (mode == ProjectionMode::kPlane2D) {
    if (plane_width < 1 || plane_height < 1) throw ConfigError("plane extent must be positive");
    if (patch_size < 1 || patch_size > plane_width || patch_size > plane_height) {
      throw ConfigError("patch_size must lie in [1, plane extent]");
    }
  } else {
    if (line_length < 1) throw ConfigError("line_length must be >= 1");
    if (segment_size < 1) throw ConfigError("segment_size must be >= 1");
  }
}

namespace {

Eigen::Matrix3d rot_y(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Eigen::Matrix3d rot_x(double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

// Largest double strictly below `extent`.
double clamp_extent(double x, double extent) {
  return std::clamp(x, 0.0, std::nextafter(extent, 0.0));
}

}  // namespace

ViewBasis make_view_basis(const ProjectionConfig& cfg) {
  cfg.validate();
  ViewBasis basis;
  basis.mode = cfg.mode;
  const double elev = cfg.elevation_deg * std::numbers::pi / 180.0;
  for (int j = 0; j < cfg.m_views; ++j) {
    const double theta = 2.0 * std::numbers::pi * j / cfg.m_views;
    basis.azimuths.push_back(theta);
    // Viewing at azimuth theta equals rotating the cloud by rot_y(theta) and
    // viewing at azimuth zero.
    const Eigen::Matrix3d r = rot_x(elev) * rot_y(theta);
    if (cfg.mode == ProjectionMode::kLine1D) {
      basis.directions.emplace_back(std::cos(theta), 0.0, std::sin(theta));
    } else {
      basis.rotations.push_back(r);
      basis.directions.push_back(r.transpose() * Vec3::UnitZ());
    }
  }
  return basis;
}

double project_1d(const Vec3& p, const ViewBasis& basis, int j) {
  return basis.directions.at(j).dot(p);
}

double line_position(double projected, const ProjectionConfig& cfg) {
  return clamp_extent(0.5 * (projected + 1.0) * cfg.line_length, cfg.line_length);
}

Eigen::Vector2d project_2d(const Vec3& p, const ViewBasis& basis, int j,
                           const ProjectionConfig& cfg) {
  const Vec3 q = basis.rotations.at(j) * p;
  const double u = clamp_extent(0.5 * (q.x() + 1.0) * cfg.plane_width, cfg.plane_width);
  const double v = clamp_extent(0.5 * (q.y() + 1.0) * cfg.plane_height, cfg.plane_height);
  return {u, v};
}

int pe_index_1d(double position, int length) {
  const double f = std::floor(position);
  if (!(f >= 0.0)) return 0;
  return static_cast<int>(std::min<double>(f, length - 1));
}

std::pair<int, int> pe_patch_2d(double u, double v, int patch, int rows, int cols) {
  return {pe_index_1d(v / patch, rows), pe_index_1d(u / patch, cols)};
}

RowVec pe_lookup(const PETable& table, double position) {
  if (table.mode != ProjectionMode::kLine1D) throw ModeMismatch("1D lookup on a 2D table");
  return table.data.row(pe_index_1d(position, table.rows));
}

RowVec pe_lookup(const PETable& table, double u, double v, int patch_size) {
  if (table.mode != ProjectionMode::kPlane2D) throw ModeMismatch("2D lookup on a 1D table");
  const auto [r, c] = pe_patch_2d(u, v, patch_size, table.rows, table.cols);
  return table.data.row(r * table.cols + c);
}

ProjectedPositions project_tokens(const Coords& coords, const ViewBasis& basis,
                                  const ProjectionConfig& cfg) {
  const auto n = coords.rows();
  const int m = basis.size();
  ProjectedPositions pos;
  pos.mode = cfg.mode;
  pos.u = Mat::Zero(n, m);
  pos.v = Mat::Zero(n, m);
  pos.pe_index.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 p = coords.row(i).transpose();
    for (int j = 0; j < m; ++j) {
      if (cfg.mode == ProjectionMode::kLine1D) {
        const double x = line_position(project_1d(p, basis, j), cfg);
        pos.u(i, j) = x;
        pos.pe_index(i, j) = pe_index_1d(x, cfg.line_length);
      } else {
        const Eigen::Vector2d uv = project_2d(p, basis, j, cfg);
        pos.u(i, j) = uv.x();
        pos.v(i, j) = uv.y();
        const auto [r, c] =
            pe_patch_2d(uv.x(), uv.y(), cfg.patch_size, cfg.grid_rows(), cfg.grid_cols());
        pos.pe_index(i, j) = r * cfg.grid_cols() + c;
      }
    }
  }
  return pos;
}

Mat average_pe(const ProjectedPositions& pos, const PETable& table) {
  if (pos.mode != table.mode) throw ModeMismatch("positions and PE table modes differ");
  Mat out = Mat::Zero(pos.tokens(), table.dim());
  for (int i = 0; i < pos.tokens(); ++i) {
    for (int j = 0; j < pos.views(); ++j) {
      const int idx = pos.pe_index(i, j);
      if (idx < 0 || idx >= table.cells()) throw ModeMismatch("PE index outside table");
      out.row(i) += table.data.row(idx);
    }
  }
  out /= static_cast<double>(pos.views());
  return out;
}

EncodedTokens assign_positional_encoding(const TokenSet& tokens, const ViewBasis& basis,
                                         const ProjectionConfig& cfg, const PETable& table) {
  if (table.mode != cfg.mode || basis.mode != cfg.mode) {
    throw ModeMismatch("PE table is " + mode_name(table.mode) + " but projection is " +
                       mode_name(cfg.mode));
  }
  const bool shape_ok = cfg.mode == ProjectionMode::kLine1D
                            ? table.rows == cfg.line_length && table.cols == 1
                            : table.rows == cfg.grid_rows() && table.cols == cfg.grid_cols();
  if (!shape_ok) throw ModeMismatch("PE table geometry does not match projection config");
  if (table.dim() != tokens.dim()) throw DimMismatch("PE width differs from token width");
  EncodedTokens out;
  out.positions = project_tokens(tokens.coords, basis, cfg);
  out.tokens.coords = tokens.coords;
  out.tokens.features = tokens.features + average_pe(out.positions, table);
  return out;
}

PETable sinusoidal_table_1d(int length, int dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal PE width must be even");
  PETable t;
  t.mode = ProjectionMode::kLine1D;
  t.rows = length;
  t.cols = 1;
  t.data.resize(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double w = std::pow(10000.0, -2.0 * i / dim);
      t.data(pos, 2 * i) = std::sin(pos * w);
      t.data(pos, 2 * i + 1) = std::cos(pos * w);
    }
  }
  return t;
}

PETable sinusoidal_table_2d(int rows, int cols, int dim) {
  if (dim % 4 != 0) throw ConfigError("2D sinusoidal PE width must be divisible by 4");
  const int half = dim / 2;
  const PETable r = sinusoidal_table_1d(rows, half);
  const PETable c = sinusoidal_table_1d(cols, half);
  PETable t;
  t.mode = ProjectionMode::kPlane2D;
  t.rows = rows;
  t.cols = cols;
  t.data.resize(static_cast<Eigen::Index>(rows) * cols, dim);
  for (int a = 0; a < rows; ++a) {
    for (int b = 0; b < cols; ++b) {
      t.data.row(a * cols + b) << r.data.row(a), c.data.row(b);
    }
  }
  return t;
}

}  // namespace a2p
