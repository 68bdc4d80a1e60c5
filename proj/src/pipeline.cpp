#include "afford3d/pipeline.hpp"

#include <exception>
#include <optional>

#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/kernels.hpp"

namespace afford3d::pipeline {

model::Sample load_sample(const dataset::Manifest& manifest, const dataset::ManifestEntry& entry) {
  model::Sample s;
  s.cloud = read_point_cloud(manifest.resolve(entry.point_cloud_path));
  s.embeddings.video_id = entry.video_id;
  s.embeddings.affordance = entry.affordance_type;
  if (entry.embedding_source != dataset::kSyntheticSource) s.embeddings.file = manifest.resolve(entry.embedding_source);
  return s;
}

std::vector<model::Sample> load_split(const dataset::Manifest& manifest, dataset::Split split) {
  std::vector<model::Sample> out;
  for (const auto& e : manifest.entries)
    if (e.split == split) out.push_back(load_sample(manifest, e));
  return out;
}

namespace {

// Runs f(i) for every index in parallel and rethrows the first failure.
template <class F>
void parallel_for_each(std::size_t count, F&& f) {
  std::vector<std::exception_ptr> errors(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<train::TrainingSample> prepare_training_set(std::span<const model::Sample> samples,
                                                        const train::TrainConfig& config) {
  std::vector<train::TrainingSample> out(samples.size());
  parallel_for_each(samples.size(),
                    [&](std::size_t i) { out[i] = train::prepare_training_sample(samples[i], config); });
  return out;
}

metrics::MetricsReport evaluate_samples(std::span<const model::Sample> samples, const model::ModelParams* params,
                                        const train::TrainConfig& config, const EvalOptions& options) {
  if (options.mode == ScoreMode::Model && !params) fail(ErrorKind::InvalidInput, "model scoring needs parameters");
  std::vector<metrics::SampleMetrics> per_sample(samples.size());
  parallel_for_each(samples.size(), [&](std::size_t i) {
    const model::Sample& s = samples[i];
    if (!s.cloud.labels) fail(ErrorKind::Dataset, "evaluation sample '" + s.embeddings.video_id + "' has no labels");
    const std::vector<double>& labels = *s.cloud.labels;
    std::vector<double> scores;
    switch (options.mode) {
      case ScoreMode::Oracle:
        scores = labels;
        break;
      case ScoreMode::Constant:
        scores.assign(labels.size(), options.constant);
        break;
      case ScoreMode::Model:
        scores = model::forward(s, *params, config.model, config.seed);
        break;
    }
    per_sample[i] = metrics::evaluate_sample(s.embeddings.affordance, scores, labels, options.protocol);
  });
  return metrics::aggregate(per_sample, options.label, options.protocol, options.config_hash);
}

metrics::MetricsReport evaluate(const dataset::Manifest& manifest, dataset::Split split,
                                const model::ModelParams* params, const train::TrainConfig& config,
                                const EvalOptions& options) {
  std::vector<dataset::ManifestEntry> subset;
  for (const auto& e : manifest.entries)
    if (e.split == split) subset.push_back(e);
  const auto pairing = dataset::validate_pairing(subset);
  if (!pairing.ok()) {
    std::string msg = "split failed pairing validation:";
    for (const auto& v : pairing.violations) msg += "\n  " + v;
    fail(ErrorKind::Dataset, msg);
  }
  if (subset.empty()) fail(ErrorKind::Dataset, std::string("split '") + dataset::to_string(split) + "' is empty");
  const auto samples = load_split(manifest, split);
  return evaluate_samples(samples, params, config, options);
}

}  // namespace afford3d::pipeline
