#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "afford3d/error.hpp"
#include "afford3d/geometry.hpp"
#include "afford3d/kdtree.hpp"
#include "test_support.hpp"

using namespace afford3d;

namespace {

std::vector<std::size_t> brute_radius(const std::vector<Vec3>& pts, const Vec3& q, double r, std::size_t skip) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (j != skip && squared_distance(pts[j], q) <= r * r) out.push_back(j);
  return out;
}

}  // namespace

TEST_CASE("normalize: single point and centered pair") {
  PointCloud one{{{2, 2, 2}}, std::nullopt};
  CHECK(normalize_cloud(one).coords[0] == Vec3{0, 0, 0});

  PointCloud pair{{{-1, 0, 0}, {1, 0, 0}}, std::nullopt};
  const auto n = normalize_cloud(pair);
  CHECK(n.coords[0] == Vec3{-1, 0, 0});
  CHECK(n.coords[1] == Vec3{1, 0, 0});
}

TEST_CASE("normalize: random cloud is centered with unit max norm") {
  PointCloud cloud{testing::random_points(100, 3, -5.0, 7.0), std::nullopt};
  const auto n = normalize_cloud(cloud);
  Vec3 c{0, 0, 0};
  double max_norm = 0.0;
  for (const auto& p : n.coords) {
    for (int a = 0; a < 3; ++a) c[a] += p[a] / 100.0;
    max_norm = std::max(max_norm, std::sqrt(squared_distance(p, {0, 0, 0})));
  }
  CHECK(std::sqrt(squared_distance(c, {0, 0, 0})) <= 1e-9);
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("normalize: coincident cloud maps to zeros, labels untouched") {
  PointCloud cloud{{{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}, std::vector<double>{0.0, 1.0, 0.5}};
  const auto n = normalize_cloud(cloud);
  for (const auto& p : n.coords) CHECK(p == Vec3{0, 0, 0});
  CHECK(*n.labels == *cloud.labels);
}

TEST_CASE("validate_cloud rejects bad input") {
  CHECK_THROWS_AS(validate_cloud(PointCloud{}), Error);
  PointCloud nan{{{0, std::numeric_limits<double>::quiet_NaN(), 0}}, std::nullopt};
  CHECK_THROWS_AS(validate_cloud(nan), Error);
  PointCloud bad_label{{{0, 0, 0}}, std::vector<double>{1.5}};
  CHECK_THROWS_AS(validate_cloud(bad_label), Error);
  PointCloud short_labels{{{0, 0, 0}, {1, 0, 0}}, std::vector<double>{1.0}};
  CHECK_THROWS_AS(validate_cloud(short_labels), Error);
  try {
    normalize_cloud(nan);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("kdtree: single point has no neighbors") {
  const std::vector<Vec3> pts{{0, 0, 0}};
  const SpatialIndex index(pts);
  CHECK(index.radius_neighbors(0, 10.0).empty());
}

TEST_CASE("kdtree: cube corners") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)});
  const SpatialIndex index(pts);
  const auto nb = index.radius_neighbors(0, 1.1);
  CHECK(nb.indices == std::vector<std::size_t>{1, 2, 4});
  for (double d : nb.sq_dists) CHECK(d == 1.0);
}

TEST_CASE("kdtree: collinear, isolated and duplicate fixtures") {
  const std::vector<Vec3> line{{0, 0, 0}, {0.05, 0, 0}, {0.10, 0, 0}};
  CHECK(SpatialIndex(line).radius_neighbors(1, 0.06).indices == std::vector<std::size_t>{0, 2});

  const std::vector<Vec3> isolated{{0, 0, 0}, {0.5, 0, 0}};
  CHECK(SpatialIndex(isolated).radius_neighbors(0, 0.1).empty());

  const std::vector<Vec3> dup{{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}, {0.9, 0.9, 0.9}};
  const SpatialIndex index(dup);
  CHECK(index.radius_neighbors(0, 0.01).indices == std::vector<std::size_t>{1});
  CHECK(index.radius_neighbors(1, 0.01).indices == std::vector<std::size_t>{0});
}

TEST_CASE("kdtree: radius is boundary inclusive") {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.5, 0, 0}, {1.0, 0, 0}};
  CHECK(SpatialIndex(pts).radius_neighbors(0, 0.5).indices == std::vector<std::size_t>{1});
}

TEST_CASE("kdtree: radius queries match brute force on 1000 points") {
  const auto pts = testing::random_points(1000, 11);
  const SpatialIndex index(pts);
  for (double r : {0.02, 0.1, 0.3}) {
    for (std::size_t i = 0; i < pts.size(); i += 7) {
      const auto nb = index.radius_neighbors(i, r);
      REQUIRE(nb.indices == brute_radius(pts, pts[i], r, i));
      for (std::size_t j = 0; j < nb.size(); ++j) CHECK(nb.sq_dists[j] == squared_distance(pts[i], pts[nb.indices[j]]));
    }
  }
  const Vec3 q{0.1, -0.2, 0.3};
  CHECK(index.radius_query(q, 0.25).indices == brute_radius(pts, q, 0.25, pts.size()));
}

TEST_CASE("kdtree: knn") {
  const auto pts = testing::random_points(300, 5);
  const SpatialIndex index(pts);
  CHECK_THROWS_AS(index.knn({0, 0, 0}, 301), Error);
  CHECK_THROWS_AS(index.knn({0, 0, 0}, 0), Error);

  const auto all = index.knn({0, 0, 0}, 300);
  std::vector<std::size_t> sorted = all.indices;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expected(300);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(sorted == expected);

  const auto self = index.knn(pts[42], 1);
  CHECK(self.indices == std::vector<std::size_t>{42});
  CHECK(self.sq_dists[0] == 0.0);

  for (std::size_t t = 0; t < 20; ++t) {
    const Vec3 q = testing::random_points(1, 100 + t)[0];
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = squared_distance(pts[a], q), db = squared_distance(pts[b], q);
      return da != db ? da < db : a < b;
    });
    order.resize(3);
    CHECK(index.knn(q, 3).indices == order);
  }
}

TEST_CASE("kdtree: knn ties go to the lower index") {
  const std::vector<Vec3> pts{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
  CHECK(SpatialIndex(pts).knn({0, 0, 0}, 2).indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("fps: contracts") {
  const auto pts = testing::random_points(50, 9);
  CHECK_THROWS_AS(farthest_point_sample(pts, 51, 0), Error);

  auto all = farthest_point_sample(pts, 50, 1);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(50);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);

  CHECK(farthest_point_sample(pts, 10, 4) == farthest_point_sample(pts, 10, 4));
}

TEST_CASE("fps: each pick maximizes the min distance to the chosen set") {
  std::vector<Vec3> segment;
  for (int i = 0; i <= 20; ++i) segment.push_back({0.05 * i, 0, 0});
  const auto two = farthest_point_sample(segment, 2, 3);
  double best = -1.0;
  for (const auto& p : segment) best = std::max(best, squared_distance(p, segment[two[0]]));
  CHECK(squared_distance(segment[two[1]], segment[two[0]]) == best);

  const auto pts = testing::random_points(200, 21);
  const auto picks = farthest_point_sample(pts, 16, 8);
  for (std::size_t s = 1; s < picks.size(); ++s) {
    auto min_to_chosen = [&](std::size_t i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s; ++c) d = std::min(d, squared_distance(pts[i], pts[picks[c]]));
      return d;
    };
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) best_d = std::max(best_d, min_to_chosen(i));
    CHECK(min_to_chosen(picks[s]) == best_d);
  }
}

TEST_CASE("fps: canonical variant is independent of storage order") {
  const auto pts = testing::random_points(120, 33);
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
  const auto shuffled = permute_cloud(PointCloud{pts, std::nullopt}, perm);

  auto picked_points = [](const std::vector<Vec3>& p, const std::vector<std::size_t>& idx) {
    std::vector<Vec3> out;
    for (auto i : idx) out.push_back(p[i]);
    return out;
  };
  CHECK(picked_points(pts, farthest_point_sample_canonical(pts, 12, 5)) ==
        picked_points(shuffled.coords, farthest_point_sample_canonical(shuffled.coords, 12, 5)));
}
