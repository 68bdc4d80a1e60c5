#pragma once

#include <span>
#include <string>
#include <vector>

#include "afford3d/dataset.hpp"
#include "afford3d/metrics.hpp"
#include "afford3d/model.hpp"
#include "afford3d/trainer.hpp"

namespace afford3d::pipeline {

/// Reads the entry's cloud and binds its embedding source.
model::Sample load_sample(const dataset::Manifest& manifest, const dataset::ManifestEntry& entry);
std::vector<model::Sample> load_split(const dataset::Manifest& manifest, dataset::Split split);

std::vector<train::TrainingSample> prepare_training_set(std::span<const model::Sample> samples,
                                                        const train::TrainConfig& config);

enum class ScoreMode {
  Model,     // the trained decoder
  Oracle,    // scores = labels (debug; bypasses the model)
  Constant,  // every score = constant
};

struct EvalOptions {
  metrics::Protocol protocol;
  std::string label = "seen";
  ScoreMode mode = ScoreMode::Model;
  double constant = 0.5;
  std::uint64_t config_hash = 0;
};

/// Scores every sample (in parallel, capped by AFFORD3D_THREADS) and
/// aggregates in manifest order.
metrics::MetricsReport evaluate_samples(std::span<const model::Sample> samples, const model::ModelParams* params,
                                        const train::TrainConfig& config, const EvalOptions& options);

/// Validates one-to-one pairing of the split first; violations raise a
/// dataset error.
metrics::MetricsReport evaluate(const dataset::Manifest& manifest, dataset::Split split,
                                const model::ModelParams* params, const train::TrainConfig& config,
                                const EvalOptions& options);

}  // namespace afford3d::pipeline
