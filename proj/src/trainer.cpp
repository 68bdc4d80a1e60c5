#include "afford3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>

#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"

namespace afford3d::train {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::Config, "learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::Config, "weight decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail(ErrorKind::Config, "warmup ratio must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorKind::Config, "betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail(ErrorKind::Config, "adam eps must be positive");
  if (steps == 0 && epochs == 0) fail(ErrorKind::Config, "need epochs or steps");
  if (batch_size == 0) fail(ErrorKind::Config, "batch size must be positive");
  loss.validate();
  model.validate();
}

std::size_t TrainConfig::total_steps(std::size_t dataset_size) const {
  if (steps > 0) return steps;
  return epochs * ((dataset_size + batch_size - 1) / batch_size);
}

// -------------------------------------------------------------- schedule

double cosine_schedule(std::size_t step, std::size_t total, double warmup_ratio, double base_lr) {
  if (total < 1) fail(ErrorKind::Parameter, "schedule total must be >= 1");
  if (step > total) fail(ErrorKind::Parameter, "schedule step " + std::to_string(step) + " exceeds total " + std::to_string(total));
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail(ErrorKind::Parameter, "warmup ratio must be in [0, 1)");
  // Keep at least one decay step so step == total always lands on zero.
  const auto warmup = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total))), total - 1);
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ------------------------------------------------------------- optimizer

namespace {

void check_optimizer_inputs(const std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads,
                            OptimizerState& state) {
  if (grads.size() != params.size()) fail(ErrorKind::Shape, "gradient count does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i].tensor)) {
      fail(ErrorKind::Shape, "gradient for '" + params[i].name + "' has shape " + grads[i].shape_string());
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(ad::Tensor::zeros_like(p.tensor));
      state.second_moment.push_back(ad::Tensor::zeros_like(p.tensor));
    }
  }
  if (state.first_moment.size() != params.size()) fail(ErrorKind::Shape, "optimizer state does not match parameters");
}

template <bool Decoupled>
void adam_update(std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads, OptimizerState& state,
                 const AdamWSettings& s) {
  check_optimizer_inputs(params, grads, state);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor.values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
      const double step = (m[j] / c1) / (std::sqrt(v[j] / c2) + s.eps);
      if constexpr (Decoupled) p[j] -= s.learning_rate * s.weight_decay * p[j];
      p[j] -= s.learning_rate * step;
    }
  }
}

}  // namespace

void adamw_step(std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads, OptimizerState& state,
                const AdamWSettings& settings) {
  adam_update<true>(params, grads, state, settings);
}

void adam_step(std::vector<NamedTensor>& params, std::span<const ad::Tensor> grads, OptimizerState& state,
               const AdamWSettings& settings) {
  adam_update<false>(params, grads, state, settings);
}

// --------------------------------------------------------------- samples

TrainingSample prepare_training_sample(const model::Sample& sample, const TrainConfig& config) {
  if (!sample.cloud.labels) fail(ErrorKind::Dataset, "training sample has no labels");
  TrainingSample out;
  out.prepared = model::prepare_sample(sample, config.model, config.seed);
  out.labels = *out.prepared.geometry.cloud.labels;
  out.omega = losses::spatial_weights(out.prepared.geometry.cloud.coords, config.loss.radius, config.loss.sigma()).omega;
  return out;
}

SampleGradient sample_gradient(const TrainingSample& sample, const model::ModelParams& params,
                               const losses::LossConfig& loss, std::optional<std::pair<ad::Op, double>> fault) {
  ad::Tape tape;
  if (fault) tape.inject_backward_fault(fault->first, fault->second);
  const model::BoundParams bound(tape, params);
  const ad::Var probs = model::forward_probabilities(tape, bound, sample.prepared);
  SampleGradient out;
  const ad::Var total = losses::composite_loss(tape, probs, sample.labels, sample.omega, loss, &out.loss);
  tape.backward(total);
  for (ad::Var v : bound.vars()) out.grads.push_back(tape.grad(v));
  return out;
}

double sample_loss(const TrainingSample& sample, const model::ModelParams& params, const losses::LossConfig& loss) {
  ad::Tape tape;
  const model::BoundParams bound(tape, params, false);
  const ad::Var probs = model::forward_probabilities(tape, bound, sample.prepared);
  return losses::composite_loss(sample.labels, tape.value(probs).values(), sample.omega, loss).total;
}

// ---------------------------------------------------------------- train

TrainResult train(std::span<const TrainingSample> samples, const TrainConfig& config,
                  std::optional<model::ModelParams> initial) {
  config.validate();
  if (samples.empty()) fail(ErrorKind::Config, "training split is empty");

  TrainResult result{initial ? std::move(*initial) : model::ModelParams::init(config.model, config.seed), {}};
  result.params.validate(config.model);

  const std::size_t total = config.total_steps(samples.size());
  OptimizerState state;
  AdamWSettings settings{config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay};

  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  auto next_sample = [&]() {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::mt19937_64 rng(config.seed + 0x9e3779b97f4a7c15ull * (epoch + 1));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
      ++epoch;
    }
    return order[cursor++];
  };

  result.log.reserve(total);
  std::vector<std::size_t> batch;
  std::vector<SampleGradient> per_sample;
  for (std::size_t step = 0; step < total; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(next_sample());

    per_sample.assign(batch.size(), {});
    const auto count = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(static) if (count > 1)
    for (std::ptrdiff_t b = 0; b < count; ++b) {
      per_sample[static_cast<std::size_t>(b)] =
          sample_gradient(samples[batch[static_cast<std::size_t>(b)]], result.params, config.loss);
    }

    // Fixed-order batch mean.
    std::vector<ad::Tensor> grads = per_sample[0].grads;
    StepLog entry;
    entry.step = step;
    entry.loss = per_sample[0].loss;
    entry.loss.grad.clear();
    for (std::size_t b = 1; b < per_sample.size(); ++b) {
      for (std::size_t i = 0; i < grads.size(); ++i)
        for (std::size_t j = 0; j < grads[i].numel(); ++j) grads[i][j] += per_sample[b].grads[i][j];
      entry.loss.ce += per_sample[b].loss.ce;
      entry.loss.bce += per_sample[b].loss.bce;
      entry.loss.spatial += per_sample[b].loss.spatial;
      entry.loss.iou += per_sample[b].loss.iou;
      entry.loss.total += per_sample[b].loss.total;
    }
    if (per_sample.size() > 1) {
      const double inv = 1.0 / static_cast<double>(per_sample.size());
      for (auto& g : grads)
        for (double& v : g.storage()) v *= inv;
      for (double* v : {&entry.loss.ce, &entry.loss.bce, &entry.loss.spatial, &entry.loss.iou, &entry.loss.total}) *v *= inv;
    }

    settings.learning_rate = cosine_schedule(step, total, config.warmup_ratio, config.learning_rate);
    entry.learning_rate = settings.learning_rate;
    adamw_step(result.params.tensors(), grads, state, settings);
    result.log.push_back(std::move(entry));
  }
  return result;
}

std::string format_loss_log(std::span<const StepLog> log, std::optional<std::uint64_t> config_hash) {
  std::string out;
  if (config_hash) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(*config_hash));
    out += std::string("# config_hash=") + buf + "\n";
  }
  out += "step\tlr\tce\tbce\tspatial\tiou\ttotal\n";
  for (const auto& e : log) {
    out += std::to_string(e.step) + "\t" + format_double(e.learning_rate) + "\t" + format_double(e.loss.ce) + "\t" +
           format_double(e.loss.bce) + "\t" + format_double(e.loss.spatial) + "\t" + format_double(e.loss.iou) + "\t" +
           format_double(e.loss.total) + "\n";
  }
  return out;
}

// ------------------------------------------------------- gradient check

GradientReport gradient_check(const TrainingSample& sample, const model::ModelParams& params,
                              const losses::LossConfig& loss, double tolerance, double h,
                              std::optional<std::pair<ad::Op, double>> fault) {
  if (!(tolerance > 0.0)) fail(ErrorKind::Parameter, "tolerance must be positive");
  GradientReport report;
  report.tolerance = tolerance;
  auto record = [&](const std::string& name, double err) {
    report.errors.emplace_back(name, err);
    report.max_error = std::max(report.max_error, err);
    if (!(err <= tolerance)) report.passed = false;
  };

  const SampleGradient analytic = sample_gradient(sample, params, loss, fault);
  model::ModelParams probe = params;
  for (std::size_t i = 0; i < params.tensors().size(); ++i) {
    const auto& named = params.tensors()[i];
    const double err = ad::finite_difference_error(
        [&](const ad::Tensor& x) {
          probe.tensors()[i].tensor = x;
          return sample_loss(sample, probe, loss);
        },
        named.tensor, analytic.grads[i], h);
    probe.tensors()[i].tensor = named.tensor;
    record(named.name, err);
  }

  // Loss terms on their own, at the model's current predictions.
  const std::vector<double> y_hat = model::predict(sample.prepared, params);
  const ad::Tensor at({y_hat.size()}, y_hat);
  auto check_term = [&](const std::string& name, auto&& term) {
    const auto value = term(std::span<const double>(y_hat));
    const double err = ad::finite_difference_error(
        [&](const ad::Tensor& x) { return term(x.values()).value; }, at, ad::Tensor({y_hat.size()}, value.grad), h);
    record(name, err);
  };
  check_term("loss.spatial", [&](std::span<const double> p) {
    return losses::spatial_dice_loss(sample.labels, p, sample.omega, loss.epsilon);
  });
  check_term("loss.bce", [&](std::span<const double> p) { return losses::bce_loss(sample.labels, p, loss.bce_clamp); });
  check_term("loss.iou", [&](std::span<const double> p) { return losses::iou_loss(sample.labels, p, loss.epsilon); });
  return report;
}

model::Sample random_gradcheck_sample(std::size_t points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 direction{normal(rng), normal(rng), normal(rng)};
  const double offset = 0.3 * unit(rng);
  model::Sample s;
  std::vector<double> labels;
  for (std::size_t i = 0; i < points; ++i) {
    const Vec3 p{unit(rng), unit(rng), unit(rng)};
    s.cloud.coords.push_back(p);
    const double side = p[0] * direction[0] + p[1] * direction[1] + p[2] * direction[2] - offset;
    labels.push_back(1.0 / (1.0 + std::exp(-6.0 * side)));
  }
  s.cloud.labels = std::move(labels);
  s.embeddings.video_id = "gradcheck_" + std::to_string(seed);
  s.embeddings.affordance = (seed % 2) ? "grasp" : "open";
  return s;
}

model::ModelConfig gradcheck_model_config() {
  model::ModelConfig c;
  c.width = 8;
  c.video_width = 8;
  c.action_width = 8;
  c.tokens = 8;
  c.patch_k = 8;
  c.frames = 2;
  return c;
}

}  // namespace afford3d::train
