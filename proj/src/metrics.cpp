#include "afford3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/losses.hpp"

namespace afford3d::metrics {

std::vector<double> Protocol::default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 19; ++k) t.push_back(k / 20.0);
  return t;
}

std::string Protocol::describe() const {
  std::string s = "miou_thresholds=";
  for (std::size_t i = 0; i < thresholds.size(); ++i) s += (i ? "," : "") + format_double(thresholds[i]);
  return s + " gt_binarize=" + format_double(bin_threshold);
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) fail(ErrorKind::Shape, std::string(what) + ": length mismatch");
  if (a == 0) fail(ErrorKind::Shape, std::string(what) + ": empty input");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels, double bin_threshold) {
  check_lengths(scores.size(), labels.size(), "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney U with mid-ranks for ties.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] >= bin_threshold) {
        positive_rank_sum += mid_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) fail(ErrorKind::UndefinedMetric, "auc needs both positive and negative labels");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double mean_iou(std::span<const double> scores, std::span<const double> labels, std::span<const double> thresholds,
                double bin_threshold) {
  check_lengths(scores.size(), labels.size(), "mean_iou");
  if (thresholds.empty()) fail(ErrorKind::Parameter, "mean_iou: empty threshold list");
  const bool any_positive =
      std::any_of(labels.begin(), labels.end(), [&](double y) { return y >= bin_threshold; });
  if (!any_positive) fail(ErrorKind::UndefinedMetric, "mean_iou needs at least one positive label");
  double total = 0.0;
  for (double t : thresholds) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool p = scores[i] >= t;
      const bool g = labels[i] >= bin_threshold;
      inter += (p && g);
      uni += (p || g);
    }
    total += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(thresholds.size());
}

double similarity(std::span<const double> pred, std::span<const double> gt) {
  check_lengths(pred.size(), gt.size(), "similarity");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0.0 || gt[i] < 0.0) fail(ErrorKind::InvalidInput, "similarity needs nonnegative maps");
  }
  const double sp = losses::compensated_sum(pred);
  const double sg = losses::compensated_sum(gt);
  if (!(sp > 0.0) || !(sg > 0.0)) fail(ErrorKind::UndefinedMetric, "similarity of a zero-sum map");
  losses::CompensatedSum s;
  for (std::size_t i = 0; i < pred.size(); ++i) s.add(std::min(pred[i] / sp, gt[i] / sg));
  return std::clamp(s.value(), 0.0, 1.0);
}

double mae(std::span<const double> pred, std::span<const double> gt) {
  check_lengths(pred.size(), gt.size(), "mae");
  losses::CompensatedSum s;
  for (std::size_t i = 0; i < pred.size(); ++i) s.add(std::abs(pred[i] - gt[i]));
  return s.value() / static_cast<double>(pred.size());
}

SampleMetrics evaluate_sample(const std::string& affordance, std::span<const double> scores,
                              std::span<const double> labels, const Protocol& protocol) {
  SampleMetrics m;
  m.affordance = affordance;
  auto guarded = [](auto&& f) -> std::optional<double> {
    try {
      return f();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::UndefinedMetric) return std::nullopt;
      throw;
    }
  };
  m.miou = guarded([&] { return mean_iou(scores, labels, protocol.thresholds, protocol.bin_threshold); });
  m.auc = guarded([&] { return auc(scores, labels, protocol.bin_threshold); });
  m.sim = guarded([&] { return similarity(scores, labels); });
  m.mae = mae(scores, labels);
  return m;
}

// ------------------------------------------------------------ aggregation

namespace {

struct Accumulator {
  losses::CompensatedSum sum;
  std::size_t count = 0;
  void add(const std::optional<double>& v) {
    if (!v) return;
    sum.add(*v);
    ++count;
  }
  MetricValue value() const { return {count ? sum.value() / static_cast<double>(count) : 0.0, count}; }
};

void weighted_into(Accumulator& acc, const MetricValue& v) {
  acc.sum.add(v.mean * static_cast<double>(v.count));
  acc.count += v.count;
}

}  // namespace

MetricsReport aggregate(std::span<const SampleMetrics> samples, const std::string& split_label,
                        const Protocol& protocol, std::uint64_t config_hash) {
  struct Group {
    std::size_t samples = 0;
    Accumulator miou, auc, sim, mae;
  };
  std::map<std::string, Group> groups;
  for (const auto& s : samples) {
    Group& g = groups[s.affordance];
    ++g.samples;
    g.miou.add(s.miou);
    g.auc.add(s.auc);
    g.sim.add(s.sim);
    g.mae.add(s.mae);
  }

  MetricsReport report;
  report.split_label = split_label;
  report.protocol = protocol;
  report.config_hash = config_hash;
  Group overall;
  for (const auto& [name, g] : groups) {
    MetricRow row{name, g.samples, g.miou.value(), g.auc.value(), g.sim.value(), g.mae.value()};
    overall.samples += row.samples;
    weighted_into(overall.miou, row.miou);
    weighted_into(overall.auc, row.auc);
    weighted_into(overall.sim, row.sim);
    weighted_into(overall.mae, row.mae);
    report.per_type.push_back(std::move(row));
  }
  report.overall = {"overall", overall.samples, overall.miou.value(), overall.auc.value(), overall.sim.value(),
                    overall.mae.value()};
  return report;
}

// ---------------------------------------------------------------- output

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string cell(const MetricValue& v, bool percent) {
  if (v.count == 0) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), percent ? "%.2f" : "%.4f", percent ? 100.0 * v.mean : v.mean);
  return buf;
}

}  // namespace

std::string format_table(const MetricsReport& report) {
  std::string out = "split: " + report.split_label + "   config_hash: " + hash_hex(report.config_hash) + "\n";
  out += "protocol: " + report.protocol.describe() + "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %7s %8s %8s %8s %8s\n", "affordance", "samples", "mIoU%", "AUC%", "SIM",
                "MAE");
  out += line;
  auto add_row = [&](const MetricRow& r) {
    std::snprintf(line, sizeof(line), "%-16s %7zu %8s %8s %8s %8s\n", r.name.c_str(), r.samples,
                  cell(r.miou, true).c_str(), cell(r.auc, true).c_str(), cell(r.sim, false).c_str(),
                  cell(r.mae, false).c_str());
    out += line;
  };
  for (const auto& r : report.per_type) add_row(r);
  add_row(report.overall);
  return out;
}

std::string format_records(const MetricsReport& report) {
  std::string out = "#afford3d-metrics v1 split=" + report.split_label + " config_hash=" + hash_hex(report.config_hash) +
                    " " + report.protocol.describe() + "\n";
  auto record = [&](const char* kind, const MetricRow& r) {
    out += std::string("kind=") + kind + " name=" + r.name + " samples=" + std::to_string(r.samples);
    auto field = [&](const char* key, const MetricValue& v) {
      out += std::string(" ") + key + "=" + (v.count ? format_double(v.mean) : "nan") + " " + key +
             "_count=" + std::to_string(v.count);
    };
    field("miou", r.miou);
    field("auc", r.auc);
    field("sim", r.sim);
    field("mae", r.mae);
    out += "\n";
  };
  for (const auto& r : report.per_type) record("type", r);
  record("overall", report.overall);
  return out;
}

MetricsReport parse_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  MetricsReport report;
  bool header = false;
  auto kv = [](const std::string& token) -> std::pair<std::string, std::string> {
    const auto eq = token.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Format, "metrics record: expected key=value, got '" + token + "'");
    return {token.substr(0, eq), token.substr(eq + 1)};
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    if (line.starts_with("#afford3d-metrics")) {
      fields >> token >> token;  // magic, version
      while (fields >> token) {
        const auto [k, v] = kv(token);
        if (k == "split") report.split_label = v;
        if (k == "config_hash") report.config_hash = std::stoull(v, nullptr, 16);
        if (k == "gt_binarize") report.protocol.bin_threshold = parse_double(v).value_or(0.5);
        if (k == "miou_thresholds") {
          report.protocol.thresholds.clear();
          std::istringstream ts(v);
          std::string t;
          while (std::getline(ts, t, ',')) {
            const auto parsed = parse_double(t);
            if (!parsed) fail(ErrorKind::Format, "metrics record: bad threshold");
            report.protocol.thresholds.push_back(*parsed);
          }
        }
      }
      header = true;
      continue;
    }
    MetricRow row;
    std::string kind;
    while (fields >> token) {
      const auto [k, v] = kv(token);
      auto metric = [&](MetricValue& m, const std::string& base) {
        if (k == base) m.mean = v == "nan" ? 0.0 : parse_double(v).value_or(0.0);
        if (k == base + "_count") m.count = std::stoull(v);
      };
      if (k == "kind") kind = v;
      if (k == "name") row.name = v;
      if (k == "samples") row.samples = std::stoull(v);
      metric(row.miou, "miou");
      metric(row.auc, "auc");
      metric(row.sim, "sim");
      metric(row.mae, "mae");
    }
    if (kind == "overall") {
      report.overall = row;
    } else if (kind == "type") {
      report.per_type.push_back(row);
    } else {
      fail(ErrorKind::Format, "metrics record: unknown kind '" + kind + "'");
    }
  }
  if (!header) fail(ErrorKind::Format, "metrics record: missing header");
  return report;
}

}  // namespace afford3d::metrics
