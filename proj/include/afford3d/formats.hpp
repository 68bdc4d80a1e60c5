#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "afford3d/autodiff.hpp"
#include "afford3d/geometry.hpp"

namespace afford3d {

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;

  bool operator==(const NamedTensor&) const = default;
};

/// Contents of an "A3DW" tensor container.
struct TensorArchive {
  std::vector<NamedTensor> tensors;
  std::optional<std::uint64_t> config_hash;

  const ad::Tensor* find(const std::string& name) const;
};

// "A3DW" container: magic, version byte, then per tensor
//   u64 name length, name bytes, u64 rank, u64 extents[rank], f64 values[]
// all little-endian. The config hash travels as an extra record named
// "meta:config_hash:<16 hex digits>" with rank 1 and extent 0.
std::string encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(const std::string& bytes);
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

// Text point clouds: "#afford3d-pc v1 N=<count>" then "x y z [label]" lines.
// Values are written in shortest round-trip form.
std::string format_point_cloud(const PointCloud& cloud);
PointCloud parse_point_cloud(const std::string& text, const std::string& origin = "<memory>");
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);

/// ASCII PLY with uchar red/green/blue per vertex.
struct ColoredCloud {
  std::vector<Vec3> coords;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<std::string> comments;
};

/// red = round(255 p), green = blue = round(255 (1 - p) 0.8)
std::array<std::uint8_t, 3> heat_color(double probability);
std::string format_ply(const ColoredCloud& cloud);
ColoredCloud parse_ply(const std::string& text);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
/// Strict decimal parse; rejects NaN/Inf and trailing garbage.
std::optional<double> parse_double(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace afford3d
