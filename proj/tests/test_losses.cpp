#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "iidsu/density_codec.hpp"
#include "iidsu/fusion_model.hpp"
#include "iidsu/grad_check.hpp"
#include "iidsu/losses.hpp"
#include "iidsu/nn.hpp"
#include "iidsu/ops.hpp"

using namespace iidsu;

namespace {

Tensor rand_t(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, Precision::f64);
}

}  // namespace

TEST_CASE("waypoint_loss: identical waypoints give zero") {
  Rng rng(3);
  const Tensor wp = rand_t(rng, {4, 2}, -5, 5);
  CHECK(waypoint_loss(wp, wp).value() == 0.0);
}

TEST_CASE("waypoint_loss: +1 x-offset at every waypoint gives 0.5") {
  Rng rng(4);
  const Tensor expert = rand_t(rng, {4, 2}, -5, 5);
  std::vector<double> shifted = expert.data();
  for (int i = 0; i < 4; ++i) shifted[i * 2] += 1.0;
  const Tensor pred = Tensor::from_values({4, 2}, shifted, Precision::f64);
  CHECK(waypoint_loss(pred, expert).value() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("waypoint_loss: one coordinate off by 2 gives 0.25") {
  const Tensor expert = Tensor::zeros({4, 2}, Precision::f64);
  Tensor pred = Tensor::zeros({4, 2}, Precision::f64);
  pred.data_mut()[5] = 2.0;
  CHECK(waypoint_loss(pred, expert).value() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("waypoint_loss rejects wrong lengths") {
  CHECK_THROWS_AS(waypoint_loss(Tensor::zeros({3, 2}, Precision::f64),
                                Tensor::zeros({4, 2}, Precision::f64)),
                  ContractError);
  CHECK_THROWS_AS(waypoint_loss(Tensor::zeros({4, 2}, Precision::f64),
                                Tensor::zeros({8}, Precision::f64)),
                  ContractError);
}

TEST_CASE("waypoint_loss gradient matches finite differences") {
  Rng rng(5);
  Tensor pred = rand_t(rng, {4, 2}, -4, 4);
  const Tensor expert = rand_t(rng, {4, 2}, -4, 4);
  pred.set_requires_grad(true);
  const GradCheckReport rep = grad_check(
      [&](GradGraph* g) { return waypoint_loss(pred, expert, g); }, {pred},
      1e-6, 8);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("density_loss: pred == target reproduces the entropy oracle") {
  const int64_t r = 16;
  Rng rng(6);
  const double eps = 1e-2;
  Tensor target = Tensor::zeros({21, r, r}, Precision::f64);
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t i = 0; i < r * r; ++i)
      target.data_mut()[t * 7 * r * r + i] =
          rng.uniform() < 0.5 ? eps : 1.0 - eps;
  const Tensor mask = Tensor::zeros({3, r, r}, Precision::f64);

  const DensityLossParts parts = density_loss(target, target, mask, 1.0, 1.0);

  // Oracle: mean of the targets' own entropies over the three heat planes.
  double want = 0.0;
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t i = 0; i < r * r; ++i) {
      const double p = target.data()[t * 7 * r * r + i];
      want += -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
    }
  want /= static_cast<double>(3 * r * r);
  CHECK(parts.heat.value() == doctest::Approx(want).epsilon(1e-12));
  CHECK(parts.reg.value() == 0.0);
  CHECK(parts.total.value() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("density_loss: empty mask makes the regression term exactly 0") {
  const int64_t r = 16;
  Rng rng(7);
  Tensor pred = rand_t(rng, {21, r, r}, 0.1, 0.9);
  Tensor target = rand_t(rng, {21, r, r}, 0.1, 0.9);
  const Tensor mask = Tensor::zeros({3, r, r}, Precision::f64);
  const DensityLossParts parts = density_loss(pred, target, mask, 1.0, 1.0);
  CHECK(parts.reg.value() == 0.0);
}

TEST_CASE("density_loss: regression follows the smooth-L1 branches") {
  const int64_t r = 16;
  Tensor target = Tensor::full({21, r, r}, 0.5, Precision::f64);
  Tensor mask = Tensor::zeros({3, r, r}, Precision::f64);
  mask.data_mut()[5 * r + 7] = 1.0;  // one supervised cell at t=1

  // |residual| < 1: value 0.5 * r^2 = 0.125, averaged over the 6
  // supervised entries of the single masked cell.
  Tensor pred = Tensor::full({21, r, r}, 0.5, Precision::f64);
  pred.data_mut()[(1 * r + 5) * r + 7] += 0.5;  // block 0, channel dx
  DensityLossParts parts = density_loss(pred, target, mask, 1.0, 1.0);
  CHECK(parts.reg.value() == doctest::Approx(0.125 / 6.0).epsilon(1e-12));

  // |residual| >= 1: value |r| - 0.5 = 1.5.
  pred = Tensor::full({21, r, r}, 0.5, Precision::f64);
  pred.data_mut()[(6 * r + 5) * r + 7] -= 2.0;  // block 0, cos channel
  parts = density_loss(pred, target, mask, 1.0, 1.0);
  CHECK(parts.reg.value() == doctest::Approx(1.5 / 6.0).epsilon(1e-12));

  // Residuals at unmasked cells contribute nothing.
  pred = Tensor::full({21, r, r}, 0.5, Precision::f64);
  pred.data_mut()[(1 * r + 9) * r + 9] += 3.0;
  parts = density_loss(pred, target, mask, 1.0, 1.0);
  CHECK(parts.reg.value() == 0.0);
}

TEST_CASE("density_loss: alpha and beta scale their parts exactly") {
  const int64_t r = 16;
  Rng rng(8);
  Tensor pred = rand_t(rng, {21, r, r}, 0.1, 0.9);
  Tensor target = rand_t(rng, {21, r, r}, 0.1, 0.9);
  Tensor mask = Tensor::zeros({3, r, r}, Precision::f64);
  mask.data_mut()[3 * r + 3] = 1.0;
  mask.data_mut()[2 * r * r + 10 * r + 12] = 1.0;
  const DensityLossParts base = density_loss(pred, target, mask, 1.0, 1.0);
  const DensityLossParts scaled = density_loss(pred, target, mask, 2.0, 0.25);
  CHECK(scaled.total.value() ==
        doctest::Approx(2.0 * base.heat.value() + 0.25 * base.reg.value())
            .epsilon(1e-12));
}

TEST_CASE("density_loss rejects mismatched shapes") {
  const Tensor a = Tensor::zeros({21, 16, 16}, Precision::f64);
  const Tensor b = Tensor::zeros({21, 8, 8}, Precision::f64);
  const Tensor mask = Tensor::zeros({3, 16, 16}, Precision::f64);
  CHECK_THROWS_AS(density_loss(a, b, mask, 1, 1), ContractError);
  CHECK_THROWS_AS(
      density_loss(a, a, Tensor::zeros({3, 8, 8}, Precision::f64), 1, 1),
      ContractError);
  CHECK_THROWS_AS(
      density_loss(Tensor::zeros({20, 16, 16}, Precision::f64),
                   Tensor::zeros({20, 16, 16}, Precision::f64), mask, 1, 1),
      ContractError);
}

TEST_CASE("density_loss gradient matches finite differences") {
  const int64_t r = 8;
  Rng rng(9);
  Tensor pred = rand_t(rng, {21, r, r}, 0.1, 0.9);
  const Tensor target = rand_t(rng, {21, r, r}, 0.1, 0.9);
  Tensor mask = Tensor::zeros({3, r, r}, Precision::f64);
  mask.data_mut()[2 * r + 2] = 1.0;
  mask.data_mut()[r * r + 4 * r + 4] = 1.0;
  pred.set_requires_grad(true);
  const GradCheckReport rep = grad_check(
      [&](GradGraph* g) {
        return density_loss(pred, target, mask, 1.0, 1.0, g).total;
      },
      {pred}, 1e-6, 200);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("bev_loss: a confident correct prediction scores ~0") {
  const int64_t r = 8;
  Rng rng(10);
  Tensor target = Tensor::zeros({r, r}, Precision::f64);
  for (int64_t i = 0; i < r * r; ++i)
    target.data_mut()[i] = static_cast<double>(rng.uniform_int(3));
  Tensor logits = Tensor::full({3, r, r}, -50.0, Precision::f64);
  for (int64_t i = 0; i < r * r; ++i)
    logits.data_mut()[static_cast<int64_t>(target.data()[i]) * r * r + i] =
        50.0;
  CHECK(bev_loss(logits, target).value() < 1e-6);
}

TEST_CASE("bev_loss: uniform logits give ln 3") {
  const int64_t r = 8;
  const Tensor logits = Tensor::full({3, r, r}, 0.7, Precision::f64);
  const Tensor target = Tensor::full({r, r}, 2.0, Precision::f64);
  CHECK(bev_loss(logits, target).value() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("bev_loss matches a naive per-pixel oracle") {
  const int64_t r = 8;
  Rng rng(11);
  const Tensor logits = rand_t(rng, {3, r, r}, -3, 3);
  Tensor target = Tensor::zeros({r, r}, Precision::f64);
  for (int64_t i = 0; i < r * r; ++i)
    target.data_mut()[i] = static_cast<double>(rng.uniform_int(3));

  double want = 0.0;
  for (int64_t i = 0; i < r * r; ++i) {
    const double l0 = logits.data()[0 * r * r + i];
    const double l1 = logits.data()[1 * r * r + i];
    const double l2 = logits.data()[2 * r * r + i];
    const double mx = std::max({l0, l1, l2});
    const double z = std::exp(l0 - mx) + std::exp(l1 - mx) + std::exp(l2 - mx);
    const double lt =
        logits.data()[static_cast<int64_t>(target.data()[i]) * r * r + i];
    want += -(lt - mx - std::log(z));
  }
  want /= static_cast<double>(r * r);
  CHECK(bev_loss(logits, target).value() ==
        doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("bev_loss rejects invalid class ids") {
  const Tensor logits = Tensor::zeros({3, 4, 4}, Precision::f64);
  Tensor target = Tensor::zeros({4, 4}, Precision::f64);
  target.data_mut()[5] = 3.0;
  CHECK_THROWS_AS(bev_loss(logits, target), ContractError);
  target.data_mut()[5] = 0.5;
  CHECK_THROWS_AS(bev_loss(logits, target), ContractError);
}

TEST_CASE("bev_loss gradient matches finite differences") {
  const int64_t r = 4;
  Rng rng(12);
  Tensor logits = rand_t(rng, {3, r, r}, -2, 2);
  Tensor target = Tensor::zeros({r, r}, Precision::f64);
  for (int64_t i = 0; i < r * r; ++i)
    target.data_mut()[i] = static_cast<double>(rng.uniform_int(3));
  logits.set_requires_grad(true);
  const GradCheckReport rep = grad_check(
      [&](GradGraph* g) { return bev_loss(logits, target, g); }, {logits},
      1e-6, 48);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("traffic_loss: confident correct predictions score ~0") {
  const Tensor pred =
      Tensor::from_values({2}, {1.0 - 1e-7, 1e-7}, Precision::f64);
  const Tensor target = Tensor::from_values({2}, {1.0, 0.0}, Precision::f64);
  const TrafficLossParts parts = traffic_loss(pred, target, 1.0, 1.0);
  CHECK(parts.total.value() >= 0.0);
  CHECK(parts.total.value() <= 1e-6);
}

TEST_CASE("traffic_loss: score 0.5 gives ln 2 per term") {
  const Tensor pred = Tensor::from_values({2}, {0.5, 0.5}, Precision::f64);
  const Tensor target = Tensor::from_values({2}, {1.0, 0.0}, Precision::f64);
  const TrafficLossParts parts = traffic_loss(pred, target, 1.0, 1.0);
  CHECK(parts.light.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(parts.sign.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(parts.total.value() ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("traffic_loss: gamma 2, delta 1 with both terms ln 2 gives 3 ln 2") {
  const Tensor pred = Tensor::from_values({2}, {0.5, 0.5}, Precision::f64);
  const Tensor target = Tensor::from_values({2}, {0.0, 1.0}, Precision::f64);
  const TrafficLossParts parts = traffic_loss(pred, target, 2.0, 1.0);
  CHECK(parts.total.value() ==
        doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("traffic_loss rejects scores outside (0, 1)") {
  const Tensor target = Tensor::from_values({2}, {1.0, 0.0}, Precision::f64);
  CHECK_THROWS_AS(
      traffic_loss(Tensor::from_values({2}, {0.0, 0.5}, Precision::f64),
                   target, 1, 1),
      NumericError);
  CHECK_THROWS_AS(
      traffic_loss(Tensor::from_values({2}, {0.5, 1.0}, Precision::f64),
                   target, 1, 1),
      NumericError);
  CHECK_THROWS_AS(
      traffic_loss(Tensor::from_values({2}, {-0.1, 0.5}, Precision::f64),
                   target, 1, 1),
      NumericError);
}

TEST_CASE("weather_loss is -log p[target] and validates the class") {
  const Tensor probs =
      Tensor::from_values({4}, {0.1, 0.2, 0.3, 0.4}, Precision::f64);
  CHECK(weather_loss(probs, 2).value() ==
        doctest::Approx(-std::log(0.3)).epsilon(1e-12));
  CHECK_THROWS_AS(weather_loss(probs, 4), ContractError);
  CHECK_THROWS_AS(weather_loss(probs, -1), ContractError);
}

TEST_CASE("total_loss: zero parts give zero total") {
  const Tensor z = Tensor::scalar(0.0);
  const DensityLossParts o{z, z, z};
  const TrafficLossParts tf{z, z, z};
  const TotalLoss t = total_loss(z, o, z, tf, z, LossWeights{});
  CHECK(t.breakdown.total == 0.0);
}

TEST_CASE("total_loss: unit parts with default weights give 2.2") {
  const Tensor one = Tensor::scalar(1.0);
  const DensityLossParts o{one, one, one};
  const TrafficLossParts tf{one, one, one};
  const TotalLoss t = total_loss(one, o, one, tf, one, LossWeights{});
  CHECK(t.breakdown.total == doctest::Approx(2.2).epsilon(1e-12));
}

TEST_CASE("total_loss: zeroing auxiliary lambdas leaves lambda_wp * wp") {
  Rng rng(13);
  const Tensor wp = Tensor::scalar(rng.uniform(0.1, 2.0));
  const Tensor x = Tensor::scalar(rng.uniform(0.1, 2.0));
  LossWeights w;
  w.lambda_o = w.lambda_m = w.lambda_tf = w.lambda_wc = 0.0;
  w.lambda_wp = 1.7;
  const TotalLoss t =
      total_loss(wp, DensityLossParts{x, x, x}, x, TrafficLossParts{x, x, x},
                 x, w);
  CHECK(t.breakdown.total == doctest::Approx(1.7 * wp.value()).epsilon(1e-12));
}

TEST_CASE("total_loss is linear in each lambda") {
  Rng rng(14);
  const Tensor wp = Tensor::scalar(rng.uniform(0.1, 2.0));
  const Tensor o = Tensor::scalar(rng.uniform(0.1, 2.0));
  const Tensor m = Tensor::scalar(rng.uniform(0.1, 2.0));
  const Tensor tf = Tensor::scalar(rng.uniform(0.1, 2.0));
  const Tensor wc = Tensor::scalar(rng.uniform(0.1, 2.0));
  auto total_with = [&](double lo) {
    LossWeights w;
    w.lambda_o = lo;
    return total_loss(wp, DensityLossParts{o, o, o}, m,
                      TrafficLossParts{tf, tf, tf}, wc, w)
        .breakdown.total;
  };
  const double at0 = total_with(0.0);
  CHECK(total_with(0.8) - at0 ==
        doctest::Approx(2.0 * (total_with(0.4) - at0)).epsilon(1e-12));
}

TEST_CASE("total_loss breakdown satisfies the linear-combination invariant") {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor wp = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor oh = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor orr = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor ot = Tensor::scalar(oh.value() + orr.value());
    const Tensor m = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor tl = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor ts = Tensor::scalar(rng.uniform(0.0, 3.0));
    const Tensor tt = Tensor::scalar(tl.value() + ts.value());
    const Tensor wc = Tensor::scalar(rng.uniform(0.0, 3.0));
    LossWeights w;
    const TotalLoss t = total_loss(wp, DensityLossParts{ot, oh, orr}, m,
                                   TrafficLossParts{tt, tl, ts}, wc, w);
    const double want = w.lambda_wp * t.breakdown.wp +
                        w.lambda_o * t.breakdown.o + w.lambda_m * t.breakdown.m +
                        w.lambda_tf * t.breakdown.tf +
                        w.lambda_wc * t.breakdown.wc;
    CHECK(std::fabs(t.breakdown.total - want) < 1e-9);
    CHECK(t.breakdown.total >= 0.0);
  }
}

TEST_CASE("LossWeights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda_wp = 0.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w.lambda_wp = 1.0;
  w.beta = -0.1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("gradient flow: every head's parameters get nonzero gradients") {
  ModelConfig cfg;
  cfg.width_factor = 0.125;
  cfg.r = 32;
  cfg.precision = Precision::f64;
  FusionModel model(cfg, 77);
  Rng rng(78);

  // "Generic batch" needs a generic parameter point: the zero-initialized
  // output projections (attention proj/mlp2, plan.delta) would otherwise
  // block gradients into everything upstream of them at exact init.
  for (const auto& [name, tensor] : model.params().entries()) {
    const bool zero_init_proj =
        name.size() > 7 && (name.rfind(".proj.w") == name.size() - 7 ||
                            name.rfind(".attn.mlp2.w") != std::string::npos ||
                            name == "plan.delta.w");
    if (!zero_init_proj) continue;
    Tensor t = tensor;
    for (double& v : t.data_mut()) v = rng.uniform(-0.05, 0.05);
  }

  GradGraph g;
  const Tensor image = rand_t(rng, {3, cfg.r, cfg.r}, 0.0, 1.0);
  const Tensor lidar = rand_t(rng, {4, cfg.r, cfg.r}, 0.0, 1.0);
  const Tensor goal = Tensor::from_values({2}, {10.0, 2.0}, Precision::f64);
  const ModelOutputs out = model.forward(image, lidar, goal, &g);

  // Synthetic but valid targets.
  const Tensor wp_t = rand_t(rng, {4, 2}, -2, 2);
  std::vector<AgentBox> agents;
  AgentBox a;
  a.x = 10.0;
  a.y = 1.0;
  a.w = 2.0;
  a.l = 4.0;
  a.timestep = 1;
  agents.push_back(a);
  const EncodedDensity enc = encode_density(agents, cfg.r);
  Tensor bev_t = Tensor::zeros({cfg.r, cfg.r}, Precision::f64);
  for (int64_t i = 0; i < cfg.r * cfg.r; ++i)
    bev_t.data_mut()[i] = static_cast<double>(rng.uniform_int(3));
  const Tensor tf_t = Tensor::from_values({2}, {1.0, 0.0}, Precision::f64);

  const Tensor wp_l = waypoint_loss(out.waypoints, wp_t, &g);
  const DensityLossParts o_l =
      density_loss(out.density, enc.map, enc.mask, 1.0, 1.0, &g);
  const Tensor m_l = bev_loss(out.bev, bev_t, &g);
  const TrafficLossParts tf_l = traffic_loss(out.traffic, tf_t, 1.0, 1.0, &g);
  const Tensor wc_l = weather_loss(out.weather, 2, &g);
  const TotalLoss t = total_loss(wp_l, o_l, m_l, tf_l, wc_l, LossWeights{}, &g);

  g.backward(t.total);

  const char* groups[] = {"img",   "lidar", "fusion",   "fuse.",   "eca.",
                          "plan.", "den.",  "bev.",     "traffic.",
                          "weather."};
  for (const char* prefix : groups) {
    double norm = 0.0;
    for (const auto& [name, tensor] : model.params().entries()) {
      if (name.rfind(prefix, 0) != 0) continue;
      if (!tensor.has_grad()) continue;
      for (double gv : tensor.grad()) norm += gv * gv;
    }
    INFO("parameter group: " << prefix);
    CHECK(norm > 0.0);
  }
}
