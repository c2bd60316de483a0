#include "iidsu/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "iidsu/density_codec.hpp"
#include "iidsu/ops.hpp"

namespace iidsu {

namespace {

constexpr double kProbClamp = 1e-7;

// -( t*log(p) + (1-t)*log(1-p) ) elementwise, as a taped graph. `t` is a
// constant (no gradient flows into targets).
Tensor bce_elementwise(const Tensor& p, const Tensor& t, GradGraph* g) {
  const Tensor ones = Tensor::full(p.shape(), 1.0, p.precision());
  std::vector<double> inv(t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) inv[i] = 1.0 - t.data()[i];
  const Tensor one_minus_t =
      Tensor::from_values(t.shape(), inv, p.precision());
  const Tensor pos = mul(t, log_val(p, g), g);
  const Tensor neg = mul(one_minus_t, log_val(sub(ones, p, g), g), g);
  return scalar_mul(add(pos, neg, g), -1.0, g);
}

void require_shape(const Tensor& x, const Shape& want, const char* who) {
  if (x.shape() != want)
    throw ContractError(std::string(who) + ": expected shape " +
                        shape_str(want) + ", got " + shape_str(x.shape()));
}

}  // namespace

void LossWeights::validate() const {
  const double all[] = {lambda_wp, lambda_o, lambda_m, lambda_tf,
                        lambda_wc, alpha,    beta,     gamma,
                        delta};
  for (double v : all)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConfigError("LossWeights: weights must be finite and >= 0");
  if (!(lambda_wp > 0.0))
    throw ConfigError("LossWeights: lambda_wp must be positive");
}

Tensor waypoint_loss(const Tensor& pred, const Tensor& expert, GradGraph* g) {
  require_shape(pred, {4, 2}, "waypoint_loss(pred)");
  require_shape(expert, {4, 2}, "waypoint_loss(expert)");
  return reduce_mean(abs_val(sub(pred, expert, g), g), g);
}

DensityLossParts density_loss(const Tensor& pred, const Tensor& target,
                              const Tensor& mask, double alpha, double beta,
                              GradGraph* g) {
  if (pred.shape() != target.shape())
    throw ContractError("density_loss: pred/target shapes differ: " +
                        shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
  if (pred.shape().size() != 3 || pred.shape()[0] != kDensityChannels ||
      pred.shape()[1] != pred.shape()[2])
    throw ContractError("density_loss: maps must be {21, R, R}, got " +
                        shape_str(pred.shape()));
  const int64_t r = pred.shape()[1];
  require_shape(mask, {kDensitySteps, r, r}, "density_loss(mask)");

  // Heat: BCE mean over the three heat planes. Clamp keeps saturated
  // sigmoids (f32 rounding can hit exactly 0 or 1) inside log's domain.
  std::vector<Tensor> pred_heats, target_heats;
  for (int64_t t = 0; t < kDensitySteps; ++t) {
    pred_heats.push_back(slice(pred, 0, t * kDensityBlock, 1, g));
    target_heats.push_back(slice(target, 0, t * kDensityBlock, 1, nullptr));
  }
  const Tensor p_heat =
      clamp_val(concat(pred_heats, 0, g), kProbClamp, 1.0 - kProbClamp, g);
  const Tensor t_heat = concat(target_heats, 0, nullptr);
  const Tensor heat = reduce_mean(bce_elementwise(p_heat, t_heat, g), g);

  // Regression: smooth-L1 at masked cells, mean over supervised entries
  // (6 regression scalars per masked cell); exactly 0 with an empty mask.
  double mask_count = 0.0;
  for (double v : mask.data()) mask_count += v;
  Tensor reg;
  if (mask_count == 0.0) {
    reg = Tensor::scalar(0.0, pred.precision());
  } else {
    const int64_t plane = r * r;
    Tensor sum;
    for (int64_t t = 0; t < kDensitySteps; ++t) {
      std::vector<double> m6(static_cast<size_t>(6) * plane);
      const double* mp = mask.data().data() + t * plane;
      for (int64_t c = 0; c < 6; ++c)
        for (int64_t i = 0; i < plane; ++i) m6[c * plane + i] = mp[i];
      const Tensor mask6 =
          Tensor::from_values({6, r, r}, m6, pred.precision());
      const Tensor diff =
          sub(slice(pred, 0, t * kDensityBlock + 1, 6, g),
              slice(target, 0, t * kDensityBlock + 1, 6, nullptr), g);
      const Tensor masked = mul(smooth_l1_val(diff, g), mask6, g);
      const Tensor part = reduce_sum(masked, g);
      sum = t == 0 ? part : add(sum, part, g);
    }
    reg = scalar_mul(sum, 1.0 / (6.0 * mask_count), g);
  }

  DensityLossParts out;
  out.heat = heat;
  out.reg = reg;
  out.total = add(scalar_mul(heat, alpha, g), scalar_mul(reg, beta, g), g);
  return out;
}

Tensor bev_loss(const Tensor& pred_logits, const Tensor& target_classes,
                GradGraph* g) {
  if (pred_logits.shape().size() != 3 || pred_logits.shape()[0] != 3 ||
      pred_logits.shape()[1] != pred_logits.shape()[2])
    throw ContractError("bev_loss: logits must be {3, R, R}, got " +
                        shape_str(pred_logits.shape()));
  const int64_t r = pred_logits.shape()[1];
  require_shape(target_classes, {r, r}, "bev_loss(target)");

  const int64_t plane = r * r;
  std::vector<double> onehot(static_cast<size_t>(3) * plane, 0.0);
  for (int64_t i = 0; i < plane; ++i) {
    const double v = target_classes.data()[i];
    if (v != 0.0 && v != 1.0 && v != 2.0)
      throw ContractError("bev_loss: target classes must be exactly 0, 1 "
                          "or 2, got " +
                          std::to_string(v));
    onehot[static_cast<int64_t>(v) * plane + i] = 1.0;
  }
  const Tensor oh =
      Tensor::from_values({3, r, r}, onehot, pred_logits.precision());
  const Tensor picked = mul(log_softmax(pred_logits, 0, g), oh, g);
  return scalar_mul(reduce_sum(picked, g),
                    -1.0 / static_cast<double>(plane), g);
}

TrafficLossParts traffic_loss(const Tensor& pred, const Tensor& target,
                              double gamma, double delta, GradGraph* g) {
  require_shape(pred, {2}, "traffic_loss(pred)");
  require_shape(target, {2}, "traffic_loss(target)");
  for (double v : pred.data())
    if (!(v > 0.0 && v < 1.0))
      throw NumericError("traffic_loss: scores must lie strictly in (0, 1), "
                         "got " +
                         std::to_string(v));
  for (double v : target.data())
    if (v != 0.0 && v != 1.0)
      throw ContractError("traffic_loss: targets must be 0 or 1");

  TrafficLossParts out;
  out.light = reduce_sum(
      bce_elementwise(slice(pred, 0, 0, 1, g), slice(target, 0, 0, 1, nullptr), g),
      g);
  out.sign = reduce_sum(
      bce_elementwise(slice(pred, 0, 1, 1, g), slice(target, 0, 1, 1, nullptr), g),
      g);
  out.total =
      add(scalar_mul(out.light, gamma, g), scalar_mul(out.sign, delta, g), g);
  return out;
}

Tensor weather_loss(const Tensor& pred_probs, int target_class, GradGraph* g) {
  require_shape(pred_probs, {4}, "weather_loss(pred)");
  if (target_class < 0 || target_class > 3)
    throw ContractError("weather_loss: target class must be 0..3, got " +
                        std::to_string(target_class));
  for (double v : pred_probs.data())
    if (!(v > 0.0 && v < 1.0))
      throw NumericError("weather_loss: probabilities must lie strictly in "
                         "(0, 1)");
  const Tensor p = slice(pred_probs, 0, target_class, 1, g);
  return scalar_mul(reduce_sum(log_val(p, g), g), -1.0, g);
}

TotalLoss total_loss(const Tensor& wp, const DensityLossParts& o,
                     const Tensor& m, const TrafficLossParts& tf,
                     const Tensor& wc, const LossWeights& w, GradGraph* g) {
  w.validate();
  Tensor total = scalar_mul(wp, w.lambda_wp, g);
  total = add(total, scalar_mul(o.total, w.lambda_o, g), g);
  total = add(total, scalar_mul(m, w.lambda_m, g), g);
  total = add(total, scalar_mul(tf.total, w.lambda_tf, g), g);
  total = add(total, scalar_mul(wc, w.lambda_wc, g), g);

  TotalLoss out;
  out.total = total;
  out.breakdown.total = total.value();
  out.breakdown.wp = wp.value();
  out.breakdown.o = o.total.value();
  out.breakdown.o_heat = o.heat.value();
  out.breakdown.o_reg = o.reg.value();
  out.breakdown.m = m.value();
  out.breakdown.tf = tf.total.value();
  out.breakdown.tf_light = tf.light.value();
  out.breakdown.tf_sign = tf.sign.value();
  out.breakdown.wc = wc.value();
  return out;
}

}  // namespace iidsu
