#include "afford3d/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <string>
#include <utility>

#include "afford3d/error.hpp"

namespace afford3d {

SpatialIndex::SpatialIndex(std::span<const Vec3> coords, std::size_t leaf_size)
    : points_(coords.begin(), coords.end()), order_(coords.size()),
      leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, points_.size());
  }
}

std::size_t SpatialIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  // Split on the axis of largest extent at the median.
  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], points_[order_[i]][a]);
      hi[a] = std::max(hi[a], points_[order_[i]][a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];

  // Left holds coords <= split, right holds coords >= split.
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void SpatialIndex::radius_recurse(std::size_t node_id, const Vec3& q, double r2, std::size_t skip,
                                  NeighborList& out) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t j = order_[i];
      if (j == skip) continue;
      const double d2 = squared_distance(q, points_[j]);
      if (d2 <= r2) {
        out.indices.push_back(j);
        out.sq_dists.push_back(d2);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const double diff2 = diff * diff;
  if (diff <= 0.0 || diff2 <= r2) radius_recurse(node.left, q, r2, skip, out);
  if (diff >= 0.0 || diff2 <= r2) radius_recurse(node.right, q, r2, skip, out);
}

namespace {

void sort_by_index(NeighborList& list) {
  std::vector<std::size_t> perm(list.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(),
            [&](std::size_t a, std::size_t b) { return list.indices[a] < list.indices[b]; });
  NeighborList sorted;
  sorted.indices.reserve(perm.size());
  sorted.sq_dists.reserve(perm.size());
  for (std::size_t p : perm) {
    sorted.indices.push_back(list.indices[p]);
    sorted.sq_dists.push_back(list.sq_dists[p]);
  }
  list = std::move(sorted);
}

}  // namespace

NeighborList SpatialIndex::radius_neighbors(std::size_t i, double radius) const {
  if (!(radius > 0.0)) fail(ErrorKind::Parameter, "radius must be positive");
  if (i >= points_.size()) fail(ErrorKind::Parameter, "point index out of range");
  NeighborList out;
  radius_recurse(0, points_[i], radius * radius, i, out);
  sort_by_index(out);
  return out;
}

NeighborList SpatialIndex::radius_query(const Vec3& query, double radius) const {
  if (!(radius > 0.0)) fail(ErrorKind::Parameter, "radius must be positive");
  NeighborList out;
  if (!points_.empty()) radius_recurse(0, query, radius * radius, points_.size(), out);
  sort_by_index(out);
  return out;
}

NeighborList SpatialIndex::knn(const Vec3& query, std::size_t k) const {
  if (k < 1 || k > points_.size()) {
    fail(ErrorKind::Parameter, "knn: need 1 <= k <= N (k=" + std::to_string(k) +
                                   ", N=" + std::to_string(points_.size()) + ")");
  }
  // Max-heap on (d2, index): the top is the current worst candidate.
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;

  auto visit = [&](auto&& self, std::size_t node_id) -> void {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t j = order_[i];
        const Entry e{squared_distance(query, points_[j]), j};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    const std::size_t near = diff <= 0.0 ? node.left : node.right;
    const std::size_t far = diff <= 0.0 ? node.right : node.left;
    self(self, near);
    // Equality still descends: a point at exactly the worst distance can win
    // the index tie-break.
    if (heap.size() < k || diff * diff <= heap.top().first) self(self, far);
  };
  visit(visit, 0);

  std::vector<Entry> found;
  found.reserve(heap.size());
  while (!heap.empty()) {
    found.push_back(heap.top());
    heap.pop();
  }
  std::sort(found.begin(), found.end());
  NeighborList out;
  for (const auto& [d2, j] : found) {
    out.indices.push_back(j);
    out.sq_dists.push_back(d2);
  }
  return out;
}

}  // namespace afford3d
