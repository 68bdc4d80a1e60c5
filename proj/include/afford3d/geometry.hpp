#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace afford3d {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// An object point cloud with optional per-point affordance labels in [0,1].
struct PointCloud {
  std::vector<Vec3> coords;
  std::optional<std::vector<double>> labels;

  std::size_t size() const { return coords.size(); }
  bool has_labels() const { return labels.has_value(); }
};

/// Throws InvalidInput if the cloud is empty, has non-finite coordinates, or
/// labels of the wrong length / outside [0,1].
void validate_cloud(const PointCloud& cloud);

/// Centers the cloud at the origin and scales it so the farthest point has
/// norm 1. An all-coincident cloud maps to all zeros. Labels are untouched.
PointCloud normalize_cloud(const PointCloud& cloud);

/// Apply a storage permutation: out[i] = in[perm[i]] for coords and labels.
PointCloud permute_cloud(const PointCloud& cloud, std::span<const std::size_t> perm);

/// Indices sorted lexicographically by (x, y, z), ties by index.
std::vector<std::size_t> canonical_order(std::span<const Vec3> coords);

/// Greedy farthest point sampling. The first pick is a seeded uniform draw;
/// each later pick maximizes the minimum distance to the chosen set (ties go
/// to the lower index).
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t count,
                                               std::uint64_t seed);

/// FPS run on the canonical (sorted) ordering and mapped back, so the chosen
/// set of points does not depend on storage order.
std::vector<std::size_t> farthest_point_sample_canonical(std::span<const Vec3> coords,
                                                         std::size_t count, std::uint64_t seed);

}  // namespace afford3d
