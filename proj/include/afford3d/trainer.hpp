#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afford3d/autodiff.hpp"
#include "afford3d/losses.hpp"
#include "afford3d/model.hpp"

namespace afford3d::train {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  double warmup_ratio = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t steps = 0;  // nonzero overrides epochs
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  losses::LossConfig loss;
  model::ModelConfig model;

  void validate() const;
  std::size_t total_steps(std::size_t dataset_size) const;
};

/// Linear warmup over ceil(warmup_ratio * total) steps, then cosine decay to
/// zero at step == total.
double cosine_schedule(std::size_t step, std::size_t total, double warmup_ratio, double base_lr);

struct OptimizerState {
  std::vector<ad::Tensor> first_moment;
  std::vector<ad::Tensor> second_moment;
  std::size_t step = 0;
};

struct AdamWSettings {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled weight decay Adam with bias correction. Moments are created on
/// the first call.
void adamw_step(std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads, OptimizerState& state,
                const AdamWSettings& settings);

/// Plain Adam (no decay term), kept as the reference for adamw_step with
/// weight_decay = 0.
void adam_step(std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads, OptimizerState& state,
               const AdamWSettings& settings);

/// A sample with everything the loss needs precomputed.
struct TrainingSample {
  model::PreparedSample prepared;
  std::vector<double> labels;
  std::vector<double> omega;
};

TrainingSample prepare_training_sample(const model::Sample& sample, const TrainConfig& config);

/// Loss and parameter gradients of one sample.
struct SampleGradient {
  losses::LossBreakdown loss;
  std::vector<ad::Tensor> grads;
};

SampleGradient sample_gradient(const TrainingSample& sample, const model::ModelParams& params,
                               const losses::LossConfig& loss,
                               std::optional<std::pair<ad::Op, double>> fault = std::nullopt);

/// Total loss only (no tape gradients).
double sample_loss(const TrainingSample& sample, const model::ModelParams& params, const losses::LossConfig& loss);

struct StepLog {
  std::size_t step = 0;
  double learning_rate = 0.0;
  losses::LossBreakdown loss;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<StepLog> log;
};

/// Deterministic for a fixed config: shuffling is seeded per epoch and batch
/// gradients are reduced in sample order.
TrainResult train(std::span<const TrainingSample> samples, const TrainConfig& config,
                  std::optional<model::ModelParams> initial = std::nullopt);

/// "step lr ce bce spatial iou total", tab-separated, one line per step.
std::string format_loss_log(std::span<const StepLog> log, std::optional<std::uint64_t> config_hash = std::nullopt);

struct GradientReport {
  std::vector<std::pair<std::string, double>> errors;  // max relative error per checked tensor
  double tolerance = 1e-5;
  double max_error = 0.0;
  bool passed = true;
};

/// Compares tape gradients of the composite loss against central differences
/// for every parameter tensor, plus each loss term against its own analytic
/// gradient at the model's predictions.
GradientReport gradient_check(const TrainingSample& sample, const model::ModelParams& params,
                              const losses::LossConfig& loss, double tolerance = 1e-5, double h = 1e-6,
                              std::optional<std::pair<ad::Op, double>> fault = std::nullopt);

/// A random labelled sample for gradient checks: uniform points in the unit
/// cube, labels from a random half-space with a soft band, synthetic
/// embeddings.
model::Sample random_gradcheck_sample(std::size_t points, std::uint64_t seed);

/// Small widths that keep a full finite-difference sweep cheap.
model::ModelConfig gradcheck_model_config();

}  // namespace afford3d::train
