#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afford3d/geometry.hpp"

namespace afford3d {

/// Neighbor indices with their squared distances, index-aligned.
struct NeighborList {
  std::vector<std::size_t> indices;
  std::vector<double> sq_dists;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

// Immutable balanced KD-tree. Queries are const and safe to run concurrently.
class SpatialIndex {
 public:
  explicit SpatialIndex(std::span<const Vec3> coords, std::size_t leaf_size = 8);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// { j != i : |x_i - x_j| <= radius }, sorted by index.
  NeighborList radius_neighbors(std::size_t i, double radius) const;

  /// All points within radius of an arbitrary query, sorted by index.
  NeighborList radius_query(const Vec3& query, double radius) const;

  /// The k nearest points sorted by (distance, index).
  NeighborList knn(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    std::size_t begin = 0;  // range into order_
    std::size_t end = 0;
    int axis = -1;          // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void radius_recurse(std::size_t node, const Vec3& q, double r2, std::size_t skip,
                      NeighborList& out) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

inline SpatialIndex build_index(std::span<const Vec3> coords) { return SpatialIndex(coords); }

}  // namespace afford3d
