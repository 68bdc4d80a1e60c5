#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afford3d::metrics {

/// How mIoU and AUC binarize: GT at bin_threshold, predictions swept over
/// `thresholds` (scores >= t count as positive).
struct Protocol {
  std::vector<double> thresholds = default_thresholds();
  double bin_threshold = 0.5;

  /// 0.05, 0.10, ..., 0.95
  static std::vector<double> default_thresholds();
  std::string describe() const;
};

/// Probability that a random positive outranks a random negative, ties ½.
/// Throws UndefinedMetric unless both classes are present after binarizing.
double auc(std::span<const double> scores, std::span<const double> labels, double bin_threshold = 0.5);

/// Mean over the threshold sweep of IoU(scores >= t, labels >= bin_threshold).
/// Throws UndefinedMetric when the binarized labels have no positive point.
double mean_iou(std::span<const double> scores, std::span<const double> labels, std::span<const double> thresholds,
                double bin_threshold = 0.5);

/// Histogram intersection of the two maps after each is normalized to sum 1.
double similarity(std::span<const double> pred, std::span<const double> gt);

double mae(std::span<const double> pred, std::span<const double> gt);

/// Per-sample values; an empty optional marks an undefined metric.
struct SampleMetrics {
  std::string affordance;
  std::optional<double> miou;
  std::optional<double> auc;
  std::optional<double> sim;
  std::optional<double> mae;
};

SampleMetrics evaluate_sample(const std::string& affordance, std::span<const double> scores,
                              std::span<const double> labels, const Protocol& protocol);

struct MetricValue {
  double mean = 0.0;
  std::size_t count = 0;  // samples where the metric was defined
};

struct MetricRow {
  std::string name;  // affordance type, or "overall"
  std::size_t samples = 0;
  MetricValue miou, auc, sim, mae;
};

struct MetricsReport {
  std::string split_label;  // seen | unseen
  Protocol protocol;
  std::uint64_t config_hash = 0;
  std::vector<MetricRow> per_type;  // sorted by affordance name
  MetricRow overall;
};

/// Groups by affordance and averages; the overall row is the count-weighted
/// mean of the type rows (per metric, over defined samples only).
MetricsReport aggregate(std::span<const SampleMetrics> samples, const std::string& split_label,
                        const Protocol& protocol, std::uint64_t config_hash = 0);

std::string format_table(const MetricsReport& report);
/// One "key=value" record per row after a header line.
std::string format_records(const MetricsReport& report);
MetricsReport parse_records(const std::string& text);

}  // namespace afford3d::metrics
