#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "any2point/pointcloud.hpp"
#include "any2point/projection.hpp"

namespace a2p {

// A2PC: "A2PC", u32 N, N*3 little-endian float32, optional trailing u16 label.
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);

// A2PE: "A2PE", u8 mode (1 = line, 2 = plane), u32 dims (line: L, D; plane:
// rows, cols, D), then little-endian float32 payload in row-major order.
void write_pe_table(const std::filesystem::path& path, const PETable& table);
PETable read_pe_table(const std::filesystem::path& path);

/// One row per token: x,y,z,<value_name>.
void write_token_csv(const std::filesystem::path& path, const Coords& coords,
                     const std::vector<double>& values, const std::string& value_name);

}  // namespace a2p
