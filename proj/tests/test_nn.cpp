#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "iidsu/grad_check.hpp"
#include "iidsu/nn.hpp"

using namespace iidsu;

TEST_CASE("rng is deterministic and draws are in range") {
  Rng a(42), b(42), c(43);
  bool all_match = true, any_differ = false;
  for (int i = 0; i < 1000; ++i) {
    const double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
    all_match = all_match && (ua == ub);
    any_differ = any_differ || (ua != uc);
    CHECK(ua >= 0.0);
    CHECK(ua < 1.0);
  }
  CHECK(all_match);
  CHECK(any_differ);

  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    const int64_t v = d.uniform_int(13);
    CHECK(v >= 0);
    CHECK(v < 13);
  }
  CHECK_THROWS_AS(d.uniform_int(0), ContractError);
}

TEST_CASE("rng normal has approximately standard moments") {
  Rng r(123);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("param store registers, dedups and validates") {
  ParamStore ps(Precision::f64, 1);
  Tensor w = ps.param("layer.w", {4, 8}, Init::fan_in_uniform, 4);
  Tensor w2 = ps.param("layer.w", {4, 8}, Init::fan_in_uniform, 4);
  CHECK(w.id() == w2.id());  // same underlying buffer, not a re-init
  CHECK_THROWS_AS(ps.param("layer.w", {8, 4}, Init::zeros), ContractError);
  CHECK_THROWS_AS(ps.get("missing"), ContractError);
  CHECK(ps.has("layer.w"));
  CHECK(w.requires_grad());

  const double limit = 1.0 / std::sqrt(4.0);
  bool nonzero = false;
  for (double v : w.data()) {
    CHECK(v >= -limit);
    CHECK(v <= limit);
    nonzero = nonzero || v != 0.0;
  }
  CHECK(nonzero);

  Tensor b = ps.param("layer.b", {8}, Init::zeros);
  for (double v : b.data()) CHECK(v == 0.0);
  CHECK(ps.total_values() == 4 * 8 + 8);

  // Same seed, same registration order => identical weights.
  ParamStore ps2(Precision::f64, 1);
  Tensor v2 = ps2.param("layer.w", {4, 8}, Init::fan_in_uniform, 4);
  CHECK(v2.data() == w.data());
}

TEST_CASE("linear matches a hand computation and its gradients check out") {
  ParamStore ps(Precision::f64, 2);
  Linear lin(ps, "fc", 3, 2);
  // Overwrite with a hand-checkable weight matrix ({in, out} layout).
  lin.w.data_mut() = {1.0, -1.0, 0.5, 2.0, -0.25, 0.0};
  lin.b.data_mut() = {0.1, -0.2};
  Tensor x = Tensor::from_values({3}, {2.0, 1.0, -4.0});
  Tensor y = lin.forward(x);
  // y0 = 2*1 + 1*0.5 + (-4)*(-0.25) + 0.1 = 3.6
  // y1 = 2*(-1) + 1*2 + (-4)*0 - 0.2 = -0.2
  CHECK(y.shape() == Shape{2});
  CHECK(y.data()[0] == doctest::Approx(3.6).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(-0.2).epsilon(1e-12));

  Tensor xb = Tensor::from_values({2, 3}, {2, 1, -4, 0.5, 0, 1},
                                  Precision::f64, true);
  auto loss = [&](GradGraph* g) {
    Tensor out = lin.forward(xb, g);
    return reduce_mean(mul(out, out, g), g);
  };
  GradCheckReport rep = grad_check(loss, {lin.w, lin.b, xb}, 1e-5, 64);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gru cell matches a scalar reference implementation") {
  ParamStore ps(Precision::f64, 3);
  const int64_t in = 3, hid = 2;
  GruCell cell(ps, "gru", in, hid);
  Rng r(99);
  for (Tensor t : {cell.w_ih, cell.w_hh, cell.b_ih, cell.b_hh})
    for (double& v : t.data_mut()) v = r.uniform(-0.8, 0.8);
  std::vector<double> xv = {0.3, -0.7, 0.2}, hv = {0.1, -0.4};
  Tensor x = Tensor::from_values({in}, xv);
  Tensor h = Tensor::from_values({hid}, hv);
  Tensor out = cell.forward(x, h);

  // Independent scalar evaluation of the same equations.
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int64_t u = 0; u < hid; ++u) {
    auto gate = [&](int64_t block) {
      double gi = cell.b_ih.data()[block * hid + u];
      double gh = cell.b_hh.data()[block * hid + u];
      for (int64_t i = 0; i < in; ++i)
        gi += xv[i] * cell.w_ih.data()[i * 3 * hid + block * hid + u];
      for (int64_t i = 0; i < hid; ++i)
        gh += hv[i] * cell.w_hh.data()[i * 3 * hid + block * hid + u];
      return std::pair<double, double>(gi, gh);
    };
    auto [ri, rh] = gate(0);
    auto [zi, zh] = gate(1);
    auto [ni, nh] = gate(2);
    const double rr = sig(ri + rh);
    const double zz = sig(zi + zh);
    const double nn = std::tanh(ni + rr * nh);
    const double want = nn + zz * (hv[u] - nn);
    CHECK(out.data()[u] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("gru cell gradients agree with central differences") {
  ParamStore ps(Precision::f64, 4);
  GruCell cell(ps, "gru", 4, 3);
  Tensor x = Tensor::from_values({4}, {0.2, -0.5, 0.8, 0.0}, Precision::f64,
                                 true);
  Tensor h0 = Tensor::from_values({3}, {0.0, 0.3, -0.2}, Precision::f64, true);
  auto loss = [&](GradGraph* g) {
    Tensor h1 = cell.forward(x, h0, g);
    Tensor h2 = cell.forward(x, h1, g);  // two steps share the weights
    return reduce_sum(mul(h2, h2, g), g);
  };
  std::vector<Tensor> params = {cell.w_ih, cell.w_hh, cell.b_ih,
                                cell.b_hh, x,         h0};
  GradCheckReport rep = grad_check(loss, params, 1e-5, 48);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("affine layer norm normalizes then rescales") {
  ParamStore ps(Precision::f64, 5);
  AffineLayerNorm ln(ps, "ln", 4, 1);
  Tensor x = Tensor::from_values({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2});
  Tensor y0 = ln.forward(x);
  // gamma=1, beta=0 at init: plain normalization, rows have zero mean.
  for (int64_t i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < 4; ++j) s += y0.at({i, j});
    CHECK(s == doctest::Approx(0.0).epsilon(1e-9));
  }
  ln.gamma.data_mut() = {2, 2, 2, 2};
  ln.beta.data_mut() = {1, 1, 1, 1};
  Tensor y1 = ln.forward(x);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y1.data()[i] ==
          doctest::Approx(2.0 * y0.data()[i] + 1.0).epsilon(1e-9));

  Tensor xg = Tensor::from_values({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2},
                                  Precision::f64, true);
  // Weight the output so the loss is not (nearly) invariant in x, which
  // would leave only finite-difference noise to compare against.
  Tensor wt = Tensor::from_values({2, 4}, {0.3, -1.1, 0.7, 0.2,
                                           -0.6, 0.9, 0.1, -0.4});
  auto loss = [&](GradGraph* g) {
    Tensor y = ln.forward(xg, g);
    return reduce_sum(mul(y, wt, g), g);
  };
  GradCheckReport rep = grad_check(loss, {ln.gamma, ln.beta, xg}, 1e-5, 32);
  CHECK(rep.max_rel_err < 1e-6);
}
