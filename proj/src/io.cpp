#include "any2point/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>

#include "any2point/error.hpp"

namespace a2p {

static_assert(std::endian::native == std::endian::little);

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::ifstream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0) {
    throw IoError(path.string() + " is not an " + std::string(magic, 4) + " file");
  }
  return in;
}

}  // namespace

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  out.write("A2PC", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.points.size(); ++i) {
    put<float>(out, static_cast<float>(cloud.points.data()[i]));
  }
  if (cloud.label) put<std::uint16_t>(out, static_cast<std::uint16_t>(*cloud.label));
  if (!out) throw IoError("short write to " + path.string());
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  auto in = open_in(path, "A2PC");
  std::uint32_t n = 0;
  if (!get(in, n)) throw IoError(path.string() + ": missing point count");
  PointCloud cloud;
  cloud.points.resize(n, 3);
  for (Eigen::Index i = 0; i < cloud.points.size(); ++i) {
    float f;
    if (!get(in, f)) throw IoError(path.string() + ": truncated coordinates");
    cloud.points.data()[i] = f;
  }
  std::uint16_t label;
  if (get(in, label)) cloud.label = label;
  return cloud;
}

void write_pe_table(const std::filesystem::path& path, const PETable& table) {
  auto out = open_out(path);
  out.write("A2PE", 4);
  if (table.mode == ProjectionMode::kLine1D) {
    put<std::uint8_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.rows));
  } else {
    put<std::uint8_t>(out, 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.rows));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.cols));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  for (Eigen::Index i = 0; i < table.data.size(); ++i) {
    put<float>(out, static_cast<float>(table.data.data()[i]));
  }
  if (!out) throw IoError("short write to " + path.string());
}

PETable read_pe_table(const std::filesystem::path& path) {
  auto in = open_in(path, "A2PE");
  std::uint8_t mode = 0;
  if (!get(in, mode) || (mode != 1 && mode != 2)) throw IoError(path.string() + ": bad mode byte");
  PETable t;
  std::uint32_t rows = 0, cols = 1, dim = 0;
  bool ok = get(in, rows);
  if (mode == 2) ok = ok && get(in, cols);
  ok = ok && get(in, dim);
  if (!ok) throw IoError(path.string() + ": truncated header");
  t.mode = mode == 1 ? ProjectionMode::kLine1D : ProjectionMode::kPlane2D;
  t.rows = static_cast<int>(rows);
  t.cols = static_cast<int>(cols);
  t.data.resize(static_cast<Eigen::Index>(rows) * cols, dim);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) {
    float f;
    if (!get(in, f)) throw IoError(path.string() + ": truncated payload");
    t.data.data()[i] = f;
  }
  return t;
}

void write_token_csv(const std::filesystem::path& path, const Coords& coords,
                     const std::vector<double>& values, const std::string& value_name) {
  if (static_cast<Eigen::Index>(values.size()) != coords.rows()) {
    throw DimMismatch("CSV value count differs from token count");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,y,z," << value_name << "\n" << std::setprecision(9);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    out << coords(i, 0) << "," << coords(i, 1) << "," << coords(i, 2) << "," << values[i] << "\n";
  }
}

}  // namespace a2p
