#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "afford3d/error.hpp"
#include "afford3d/metrics.hpp"
#include "test_support.hpp"

using namespace afford3d;
using namespace afford3d::metrics;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(y[i] >= 0.5 && y[j] < 0.5)) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

double brute_miou(const std::vector<double>& s, const std::vector<double>& y, const std::vector<double>& ts) {
  double total = 0;
  for (double t : ts) {
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool p = s[i] >= t, g = y[i] >= 0.5;
      inter += p && g;
      uni += p || g;
    }
    total += uni == 0 ? 0.0 : inter / uni;
  }
  return total / ts.size();
}

bool rejects_with(ErrorKind kind, auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

}  // namespace

TEST_CASE("auc fixtures") {
  const std::vector<double> y{1, 1, 0, 0};
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK(rejects_with(ErrorKind::UndefinedMetric, [] { auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}); }));
}

TEST_CASE("auc matches the pairwise comparator") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = testing::random_values(200, seed);
    for (auto& v : s) v = std::round(v * 20) / 20;  // force ties
    const auto y = testing::random_values(200, seed + 50);
    CHECK(std::abs(auc(s, y) - pairwise_auc(s, y)) <= 1e-9);
  }
}

TEST_CASE("mean iou") {
  const auto ts = Protocol::default_thresholds();
  REQUIRE(ts.size() == 19);
  CHECK(ts.front() == 0.05);
  CHECK(ts.back() == 0.95);
  const std::vector<double> y{1, 0, 1, 0};
  CHECK(mean_iou(y, y, ts) == 1.0);
  CHECK(mean_iou(std::vector<double>{0, 1, 0, 1}, y, ts) == 0.0);
  CHECK(rejects_with(ErrorKind::Parameter, [&] { mean_iou(y, y, std::vector<double>{}); }));
  CHECK(rejects_with(ErrorKind::UndefinedMetric, [&] { mean_iou(y, std::vector<double>(4, 0.0), ts); }));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = testing::random_values(150, seed), g = testing::random_values(150, seed + 9);
    CHECK(std::abs(mean_iou(s, g, ts) - brute_miou(s, g, ts)) <= 1e-12);
  }
}

TEST_CASE("similarity and mae") {
  const auto g = testing::random_values(100, 1), p = testing::random_values(100, 2);
  CHECK(similarity(g, g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(rejects_with(ErrorKind::UndefinedMetric, [] { similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }));

  double sp = 0, sg = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    sp += p[i];
    sg += g[i];
  }
  double inter = 0;
  for (std::size_t i = 0; i < 100; ++i) inter += std::min(p[i] / sp, g[i] / sg);
  CHECK(std::abs(similarity(p, g) - inter) <= 1e-12);

  CHECK(mae(g, g) == 0.0);
  const std::vector<double> yb{1, 0, 0, 1};
  CHECK(mae(std::vector<double>{0, 1, 1, 0}, yb) == 1.0);
  double m = 0;
  for (std::size_t i = 0; i < 100; ++i) m += std::abs(p[i] - g[i]);
  CHECK(std::abs(mae(p, g) - m / 100) <= 1e-15);
  CHECK(rejects_with(ErrorKind::Shape, [] { mae(std::vector<double>{1}, std::vector<double>{1, 2}); }));
}

TEST_CASE("evaluate_sample marks undefined metrics") {
  const Protocol protocol;
  const auto m = evaluate_sample("grasp", std::vector<double>{0.2, 0.3}, std::vector<double>{0, 0}, protocol);
  CHECK_FALSE(m.miou.has_value());
  CHECK_FALSE(m.auc.has_value());
  CHECK_FALSE(m.sim.has_value());
  CHECK(m.mae.has_value());
}

TEST_CASE("aggregate: overall is the count-weighted mean of type rows") {
  std::vector<SampleMetrics> samples;
  for (int i = 0; i < 3; ++i) samples.push_back({"grasp", 0.1 * (i + 1), 0.6, 0.5, 0.2});
  for (int i = 0; i < 2; ++i) samples.push_back({"open", 0.8, 0.9, std::nullopt, 0.4});
  const auto r = aggregate(samples, "seen", Protocol{});
  REQUIRE(r.per_type.size() == 2);
  const auto& a = r.per_type[0];
  const auto& b = r.per_type[1];
  CHECK(a.name == "grasp");
  CHECK(a.miou.mean == doctest::Approx(0.2));
  CHECK(r.overall.samples == 5);
  CHECK(r.overall.miou.mean == doctest::Approx((3 * a.miou.mean + 2 * b.miou.mean) / 5));
  CHECK(r.overall.mae.mean == doctest::Approx((3 * 0.2 + 2 * 0.4) / 5));
  CHECK(r.overall.sim.count == 3);
  CHECK(r.overall.sim.mean == doctest::Approx(0.5));
}

TEST_CASE("records round-trip") {
  std::vector<SampleMetrics> samples{{"grasp", 0.25, 0.75, 0.5, 0.125}, {"open", std::nullopt, 0.6, 0.3, 0.1}};
  const auto r = aggregate(samples, "unseen", Protocol{}, 0xdeadbeefULL);
  const auto text = format_records(r);
  const auto back = parse_records(text);
  CHECK(back.split_label == "unseen");
  CHECK(back.config_hash == 0xdeadbeefULL);
  CHECK(format_records(back) == text);
  CHECK(format_table(r).find("overall") != std::string::npos);
}
