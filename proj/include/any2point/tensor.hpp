#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace a2p {

// Row-major so that one token / one point is one contiguous row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using IndexTable = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Partition of row indices into disjoint groups.
using Partition = std::vector<std::vector<int>>;

}  // namespace a2p
