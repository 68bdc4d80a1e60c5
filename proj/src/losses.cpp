#include "afford3d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "afford3d/error.hpp"

namespace afford3d::losses {

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    carry_ += (sum_ - t) + v;
  } else {
    carry_ += (v - t) + sum_;
  }
  sum_ = t;
}

double compensated_sum(std::span<const double> values) {
  CompensatedSum s;
  for (double v : values) s.add(v);
  return s.value();
}

// ------------------------------------------------------- spatial weights

SpatialWeights spatial_weights(const SpatialIndex& index, double radius, double sigma,
                               kernels::Exec exec) {
  if (!(radius > 0.0)) fail(ErrorKind::Parameter, "spatial_weights: radius must be positive");
  if (!(sigma > 0.0)) fail(ErrorKind::Parameter, "spatial_weights: sigma must be positive");
  const std::size_t n = index.size();
  SpatialWeights out{std::vector<double>(n, 1.0), radius, sigma};
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

  auto weight_of = [&](std::size_t i) {
    const NeighborList nb = index.radius_neighbors(i, radius);
    if (nb.empty()) return 1.0;
    CompensatedSum s;
    for (double d2 : nb.sq_dists) s.add(std::exp(-d2 * inv_two_sigma2));
    return s.value() / static_cast<double>(nb.size());
  };

  if (exec == kernels::Exec::Serial) {
    for (std::size_t i = 0; i < n; ++i) out.omega[i] = weight_of(i);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (std::ptrdiff_t i = 0; i < count; ++i) out.omega[i] = weight_of(static_cast<std::size_t>(i));
  }
  return out;
}

SpatialWeights spatial_weights(std::span<const Vec3> coords, double radius, double sigma,
                               kernels::Exec exec) {
  return spatial_weights(SpatialIndex(coords), radius, sigma, exec);
}

// ------------------------------------------------------------ loss terms

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::Shape, std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                               std::to_string(b) + ")");
  }
}

}  // namespace

LossValue spatial_dice_loss(std::span<const double> y, std::span<const double> y_hat,
                            std::span<const double> omega, double epsilon) {
  check_lengths(y.size(), y_hat.size(), "spatial_dice_loss");
  check_lengths(y.size(), omega.size(), "spatial_dice_loss");
  if (!(epsilon > 0.0)) fail(ErrorKind::Parameter, "spatial_dice_loss: epsilon must be positive");

  CompensatedSum overlap, denom;
  for (std::size_t i = 0; i < y.size(); ++i) {
    overlap.add(omega[i] * y[i] * y_hat[i]);
    denom.add(omega[i] * y[i] * y[i]);
    denom.add(omega[i] * y_hat[i] * y_hat[i]);
  }
  const double a = overlap.value();
  const double b = denom.value() + epsilon;

  LossValue out;
  out.value = std::clamp(1.0 - 2.0 * a / b, 0.0, 1.0);
  out.grad.resize(y.size());
  const double inv_b2 = 1.0 / (b * b);
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.grad[i] = -2.0 * omega[i] * (y[i] * b - 2.0 * a * y_hat[i]) * inv_b2;
  }
  return out;
}

LossValue bce_loss(std::span<const double> y, std::span<const double> y_hat, double clamp) {
  check_lengths(y.size(), y_hat.size(), "bce_loss");
  if (!(clamp > 0.0 && clamp < 0.5)) fail(ErrorKind::Parameter, "bce_loss: clamp must be in (0, 0.5)");
  if (y.empty()) fail(ErrorKind::Shape, "bce_loss: empty input");
  const double n = static_cast<double>(y.size());
  const double lo = clamp, hi = 1.0 - clamp;

  CompensatedSum total;
  LossValue out;
  out.grad.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y_hat[i], lo, hi);
    total.add(-(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p)));
    // The clamp is flat outside [lo, hi].
    out.grad[i] = (y_hat[i] > lo && y_hat[i] < hi) ? (-y[i] / p + (1.0 - y[i]) / (1.0 - p)) / n : 0.0;
  }
  out.value = std::max(0.0, total.value() / n);
  return out;
}

LossValue iou_loss(std::span<const double> y, std::span<const double> y_hat, double epsilon) {
  check_lengths(y.size(), y_hat.size(), "iou_loss");
  if (!(epsilon > 0.0)) fail(ErrorKind::Parameter, "iou_loss: epsilon must be positive");

  CompensatedSum inter, sy, sp;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter.add(y[i] * y_hat[i]);
    sy.add(y[i]);
    sp.add(y_hat[i]);
  }
  const double in = inter.value();
  const double un = sy.value() + sp.value() - in + epsilon;

  LossValue out;
  out.value = std::clamp(1.0 - in / un, 0.0, 1.0);
  out.grad.resize(y.size());
  const double inv_u2 = 1.0 / (un * un);
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.grad[i] = -(y[i] * un - in * (1.0 - y[i])) * inv_u2;
  }
  return out;
}

// ------------------------------------------------------------- assembly

void LossConfig::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius)) fail(ErrorKind::Config, "loss radius must be positive");
  if (!(sigma_ratio > 0.0) || !std::isfinite(sigma_ratio)) fail(ErrorKind::Config, "sigma_ratio must be positive");
  if (!(epsilon > 0.0)) fail(ErrorKind::Config, "epsilon must be positive");
  if (!(bce_clamp > 0.0 && bce_clamp < 0.5)) fail(ErrorKind::Config, "bce clamp must be in (0, 0.5)");
  for (double w : {weights.ce, weights.bce, weights.spatial, weights.iou}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Config, "loss weights must be finite and >= 0");
  }
}

LossBreakdown total_loss(std::optional<double> ce, double bce, double spatial, double iou,
                         const LossWeights& weights) {
  const double ce_value = ce.value_or(0.0);
  for (double t : {ce_value, bce, spatial, iou}) {
    if (!std::isfinite(t) || t < 0.0) fail(ErrorKind::InvalidInput, "loss terms must be finite and >= 0");
  }
  LossBreakdown out;
  out.ce = ce_value;
  out.bce = bce;
  out.spatial = spatial;
  out.iou = iou;
  out.total = weights.ce * ce_value + weights.bce * bce + weights.spatial * spatial + weights.iou * iou;
  return out;
}

LossBreakdown composite_loss(std::span<const double> y, std::span<const double> y_hat,
                             std::span<const double> omega, const LossConfig& config,
                             std::optional<double> ce) {
  const LossValue bce = bce_loss(y, y_hat, config.bce_clamp);
  const LossValue spatial = spatial_dice_loss(y, y_hat, omega, config.epsilon);
  const LossValue iou = iou_loss(y, y_hat, config.epsilon);
  const LossWeights& w = config.weights;
  LossBreakdown out = total_loss(ce, bce.value, spatial.value, iou.value, w);
  out.grad.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.grad[i] = w.bce * bce.grad[i] + w.spatial * spatial.grad[i] + w.iou * iou.grad[i];
  }
  return out;
}

ad::Var composite_loss(ad::Tape& tape, ad::Var probs, std::span<const double> y,
                       std::span<const double> omega, const LossConfig& config,
                       LossBreakdown* breakdown) {
  const ad::Tensor& p = tape.value(probs);
  LossBreakdown lb = composite_loss(y, p.values(), omega, config);
  const double total = lb.total;
  auto grad = std::make_shared<std::vector<double>>(std::move(lb.grad));
  if (breakdown) {
    *breakdown = lb;
    breakdown->grad = *grad;
  }
  return ad::custom(tape, {probs}, ad::Tensor::scalar(total),
                    [grad](auto, const ad::Tensor&, const ad::Tensor& g, auto grads) {
                      for (std::size_t i = 0; i < grad->size(); ++i) (*grads[0])[i] += g[0] * (*grad)[i];
                    });
}

}  // namespace afford3d::losses
