#pragma once

// Virtual 3D-to-1D/2D projection. Token coordinates are mapped onto M virtual
// lines or orthographic views; the resulting 1D/2D positions index the frozen
// positional-embedding table of the source transformer.

#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "any2point/tensor.hpp"
#include "any2point/tokenizer.hpp"

namespace a2p {

enum class ProjectionMode { kLine1D, kPlane2D };

std::string mode_name(ProjectionMode mode);
ProjectionMode parse_projection_mode(const std::string& name);

struct ProjectionConfig {
  ProjectionMode mode = ProjectionMode::kPlane2D;
  int m_views = 6;
  // 2D: virtual image plane in PE-grid pixel units
  int plane_width = 512;
  int plane_height = 512;
  int patch_size = 26;
  double elevation_deg = 30.0;
  // 1D: virtual line
  int line_length = 77;
  int segment_size = 2;

  int grid_rows() const { return plane_height / patch_size; }
  int grid_cols() const { return plane_width / patch_size; }
  void validate() const;
};

struct ViewBasis {
  ProjectionMode mode = ProjectionMode::kPlane2D;
  std::vector<double> azimuths;            // radians, 2*pi*j/M
  std::vector<Vec3> directions;            // 1D line directions / 2D viewing axes
  std::vector<Eigen::Matrix3d> rotations;  // world -> camera, 2D mode
  int size() const { return static_cast<int>(azimuths.size()); }
};

/// Per token i and view j: position in table units plus the table row it
/// addresses. For 1D, `u` holds the line position and `v` is zero.
struct ProjectedPositions {
  ProjectionMode mode = ProjectionMode::kPlane2D;
  Mat u;                 // N x M
  Mat v;                 // N x M
  IndexTable pe_index;   // N x M, flat row into PETable::data
  int tokens() const { return static_cast<int>(u.rows()); }
  int views() const { return static_cast<int>(u.cols()); }
};

/// Frozen positional-embedding table. 1D: rows = L, cols = 1. 2D: a rows x
/// cols patch grid stored row-major, one D-vector per cell.
struct PETable {
  ProjectionMode mode = ProjectionMode::kLine1D;
  int rows = 0;
  int cols = 1;
  Mat data;  // (rows * cols) x D
  bool frozen = true;

  int dim() const { return static_cast<int>(data.cols()); }
  int cells() const { return rows * cols; }
};

ViewBasis make_view_basis(const ProjectionConfig& cfg);

/// Eq. 1: projected length of `p` on line j.
double project_1d(const Vec3& p, const ViewBasis& basis, int j);
/// Affine map of a projected length in [-1, 1] onto [0, line_length).
double line_position(double projected, const ProjectionConfig& cfg);

/// Orthographic view j: rotate, drop depth, map [-1,1]^2 onto the plane, clamp.
Eigen::Vector2d project_2d(const Vec3& p, const ViewBasis& basis, int j,
                           const ProjectionConfig& cfg);

int pe_index_1d(double position, int length);
/// Returns (row, col) of the patch containing pixel (u, v).
std::pair<int, int> pe_patch_2d(double u, double v, int patch, int rows, int cols);

RowVec pe_lookup(const PETable& table, double position);
RowVec pe_lookup(const PETable& table, double u, double v, int patch_size);

ProjectedPositions project_tokens(const Coords& coords, const ViewBasis& basis,
                                  const ProjectionConfig& cfg);

/// (1/M) sum_j PE(p_ij) for every token, N x D.
Mat average_pe(const ProjectedPositions& pos, const PETable& table);

struct EncodedTokens {
  TokenSet tokens;
  ProjectedPositions positions;
};

/// Eq. 2: T_in = T + mean_j PE(p_ij). Throws ModeMismatch when the table and
/// config modes differ.
EncodedTokens assign_positional_encoding(const TokenSet& tokens, const ViewBasis& basis,
                                         const ProjectionConfig& cfg, const PETable& table);

/// Standard 1D sinusoidal table (sin on even, cos on odd channels).
PETable sinusoidal_table_1d(int length, int dim);
/// 2D factorized sinusoid: first D/2 channels encode the row, rest the column.
PETable sinusoidal_table_2d(int rows, int cols, int dim);

}  // namespace a2p
