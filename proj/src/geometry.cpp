#include "afford3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "afford3d/error.hpp"

namespace afford3d {

void validate_cloud(const PointCloud& cloud) {
  if (cloud.coords.empty()) fail(ErrorKind::InvalidInput, "point cloud is empty");
  for (std::size_t i = 0; i < cloud.coords.size(); ++i) {
    for (double v : cloud.coords[i]) {
      if (!std::isfinite(v)) {
        fail(ErrorKind::InvalidInput, "non-finite coordinate at point " + std::to_string(i));
      }
    }
  }
  if (cloud.labels) {
    if (cloud.labels->size() != cloud.coords.size()) {
      fail(ErrorKind::InvalidInput, "label count does not match point count");
    }
    for (std::size_t i = 0; i < cloud.labels->size(); ++i) {
      const double y = (*cloud.labels)[i];
      if (!(y >= 0.0 && y <= 1.0)) {
        fail(ErrorKind::InvalidInput, "label outside [0,1] at point " + std::to_string(i));
      }
    }
  }
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  validate_cloud(cloud);
  const double n = static_cast<double>(cloud.size());

  // Two-pass centroid: the mean, then the mean of residuals, keeps the
  // recentred cloud's centroid at round-off level even for large offsets.
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  for (int a = 0; a < 3; ++a) c[a] /= n;
  Vec3 r{0.0, 0.0, 0.0};
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) r[a] += p[a] - c[a];
  for (int a = 0; a < 3; ++a) c[a] += r[a] / n;

  PointCloud out;
  out.labels = cloud.labels;
  out.coords.reserve(cloud.size());
  double max_norm = 0.0;
  for (const auto& p : cloud.coords) {
    Vec3 q{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
    max_norm = std::max(max_norm, std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]));
    out.coords.push_back(q);
  }
  if (max_norm == 0.0) {
    for (auto& q : out.coords) q = {0.0, 0.0, 0.0};
    return out;
  }
  for (auto& q : out.coords)
    for (double& v : q) v /= max_norm;
  return out;
}

PointCloud permute_cloud(const PointCloud& cloud, std::span<const std::size_t> perm) {
  if (perm.size() != cloud.size()) fail(ErrorKind::Shape, "permutation length mismatch");
  PointCloud out;
  out.coords.reserve(perm.size());
  for (std::size_t i : perm) out.coords.push_back(cloud.coords.at(i));
  if (cloud.labels) {
    std::vector<double> labels;
    labels.reserve(perm.size());
    for (std::size_t i : perm) labels.push_back(cloud.labels->at(i));
    out.labels = std::move(labels);
  }
  return out;
}

std::vector<std::size_t> canonical_order(std::span<const Vec3> coords) {
  std::vector<std::size_t> order(coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });
  return order;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t count,
                                               std::uint64_t seed) {
  const std::size_t n = coords.size();
  if (count < 1 || count > n) {
    fail(ErrorKind::Parameter, "farthest_point_sample: need 1 <= M <= N (M=" +
                                   std::to_string(count) + ", N=" + std::to_string(n) + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  chosen.push_back(pick(rng));

  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[chosen.back()] = 1;
  while (chosen.size() < count) {
    const Vec3& last = coords[chosen.back()];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      min_d2[j] = std::min(min_d2[j], squared_distance(coords[j], last));
      if (min_d2[j] > best_d2) {
        best_d2 = min_d2[j];
        best = j;
      }
    }
    taken[best] = 1;
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<std::size_t> farthest_point_sample_canonical(std::span<const Vec3> coords,
                                                         std::size_t count, std::uint64_t seed) {
  const auto order = canonical_order(coords);
  std::vector<Vec3> sorted;
  sorted.reserve(coords.size());
  for (std::size_t i : order) sorted.push_back(coords[i]);
  auto picks = farthest_point_sample(sorted, count, seed);
  for (auto& p : picks) p = order[p];
  return picks;
}

}  // namespace afford3d
