#pragma once

#include <optional>
#include <span>
#include <vector>

#include "afford3d/autodiff.hpp"
#include "afford3d/geometry.hpp"
#include "afford3d/kdtree.hpp"
#include "afford3d/kernels.hpp"

namespace afford3d::losses {

/// Neumaier-compensated running sum; the result does not depend on the
/// order of the addends beyond the last bit or two.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

double compensated_sum(std::span<const double> values);

struct SpatialWeights {
  std::vector<double> omega;  // each in (0, 1]
  double radius = 0.0;
  double sigma = 0.0;
};

/// Per-point neighborhood-averaged Gaussian weight:
///   omega_i = mean_{j in N_i} exp(-|x_i - x_j|^2 / (2 sigma^2)),
///   N_i = { j != i : |x_i - x_j| <= radius }.
/// A point with no neighbors gets omega_i = 1.
SpatialWeights spatial_weights(const SpatialIndex& index, double radius, double sigma,
                               kernels::Exec exec = kernels::Exec::Parallel);
SpatialWeights spatial_weights(std::span<const Vec3> coords, double radius, double sigma,
                               kernels::Exec exec = kernels::Exec::Parallel);

/// A loss value together with its gradient with respect to the predictions.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

LossValue spatial_dice_loss(std::span<const double> y, std::span<const double> y_hat,
                            std::span<const double> omega, double epsilon = 1e-6);
LossValue bce_loss(std::span<const double> y, std::span<const double> y_hat, double clamp = 1e-7);
LossValue iou_loss(std::span<const double> y, std::span<const double> y_hat, double epsilon = 1e-6);

struct LossWeights {
  double ce = 1.0;
  double bce = 1.0;
  double spatial = 1.0;
  double iou = 1.0;
};

struct LossConfig {
  double radius = 0.1;
  double sigma_ratio = 0.1;  // sigma = sigma_ratio * radius
  double epsilon = 1e-6;
  double bce_clamp = 1e-7;
  LossWeights weights;

  double sigma() const { return sigma_ratio * radius; }
  void validate() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double bce = 0.0;
  double spatial = 0.0;
  double iou = 0.0;
  double total = 0.0;
  std::vector<double> grad;  // d total / d y_hat
};

/// Weighted sum of the individual terms; a missing ce term counts as zero.
LossBreakdown total_loss(std::optional<double> ce, double bce, double spatial, double iou,
                         const LossWeights& weights);

/// Evaluates every term on one sample and assembles the weighted total and
/// its gradient.
LossBreakdown composite_loss(std::span<const double> y, std::span<const double> y_hat,
                             std::span<const double> omega, const LossConfig& config,
                             std::optional<double> ce = std::nullopt);

/// Records the composite loss on a tape as a scalar node depending on
/// `probs` (N values). The breakdown is written to *breakdown when given.
ad::Var composite_loss(ad::Tape& tape, ad::Var probs, std::span<const double> y,
                       std::span<const double> omega, const LossConfig& config,
                       LossBreakdown* breakdown = nullptr);

}  // namespace afford3d::losses
