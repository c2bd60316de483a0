#pragma once

#include <cstdint>

#include "iidsu/tensor.hpp"

namespace iidsu {

class GradGraph;

/// Multi-task objective weights. The lambdas scale the five task terms
/// (waypoints, object density, BEV map, traffic rules, weather); alpha/beta
/// split the density term into heatmap and regression parts, gamma/delta
/// split the traffic term into light and sign parts. Planning dominates by
/// default.
struct LossWeights {
  double lambda_wp = 1.0;
  double lambda_o = 0.4;
  double lambda_m = 0.4;
  double lambda_tf = 0.2;
  double lambda_wc = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 1.0;

  /// All weights must be >= 0 and lambda_wp > 0 (ConfigError otherwise).
  void validate() const;
};

/// Mean L1 distance over all 8 waypoint coordinates; pred and expert are
/// {4, 2} tensors. Length mismatch throws ContractError.
Tensor waypoint_loss(const Tensor& pred, const Tensor& expert,
                     GradGraph* g = nullptr);

struct DensityLossParts {
  Tensor total;  // alpha * heat + beta * reg
  Tensor heat;   // mean per-pixel binary cross-entropy over heat channels
  Tensor reg;    // mean smooth-L1 over supervised regression entries
};

/// Density-map loss. `pred` holds sigmoided heat channels and linear
/// regression channels ({21, R, R}, blocks of [heat, dx, dy, log w, log l,
/// sin, cos]); `target`/`mask` come from encode_density. The heat term is a
/// per-pixel BCE mean over all three heat planes (predictions clamped to
/// [1e-7, 1-1e-7] so saturated activations stay finite); the regression
/// term is the smooth-L1 mean over the 6 regression channels at masked
/// cells — exactly 0 when the mask is empty. Shape mismatch throws
/// ContractError.
DensityLossParts density_loss(const Tensor& pred, const Tensor& target,
                              const Tensor& mask, double alpha, double beta,
                              GradGraph* g = nullptr);

/// Mean per-pixel 3-class cross-entropy. `pred_logits` is {3, R, R};
/// `target_classes` is {R, R} holding exact class ids 0, 1 or 2 (anything
/// else throws ContractError).
Tensor bev_loss(const Tensor& pred_logits, const Tensor& target_classes,
                GradGraph* g = nullptr);

struct TrafficLossParts {
  Tensor total;  // gamma * light + delta * sign
  Tensor light;
  Tensor sign;
};

/// Binary cross-entropy on the two traffic-rule scores ({2}, order [red
/// light, speed sign]; targets are 0/1 in a {2} tensor). Scores must lie
/// strictly in (0, 1) — NumericError otherwise.
TrafficLossParts traffic_loss(const Tensor& pred, const Tensor& target,
                              double gamma, double delta,
                              GradGraph* g = nullptr);

/// 4-class cross-entropy -log p[target] on softmaxed weather probabilities
/// ({4}, strictly inside (0, 1)). target_class outside 0..3 throws
/// ContractError.
Tensor weather_loss(const Tensor& pred_probs, int target_class,
                    GradGraph* g = nullptr);

/// Scalar snapshot of one evaluated objective.
struct LossBreakdown {
  double total = 0.0;
  double wp = 0.0;
  double o = 0.0;
  double o_heat = 0.0;
  double o_reg = 0.0;
  double m = 0.0;
  double tf = 0.0;
  double tf_light = 0.0;
  double tf_sign = 0.0;
  double wc = 0.0;
};

struct TotalLoss {
  Tensor total;  // taped scalar: the weighted sum of the five task terms
  LossBreakdown breakdown;
};

/// Combines the five task terms linearly with the lambda weights and
/// reports the numeric breakdown (total = sum of weighted parts within
/// rounding).
TotalLoss total_loss(const Tensor& wp, const DensityLossParts& o,
                     const Tensor& m, const TrafficLossParts& tf,
                     const Tensor& wc, const LossWeights& w,
                     GradGraph* g = nullptr);

}  // namespace iidsu
