#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "iidsu/density_codec.hpp"
#include "iidsu/nn.hpp"
#include "iidsu/sensor_pipeline.hpp"

using namespace iidsu;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double map_at(const EncodedDensity& e, int64_t ch, int64_t row, int64_t col) {
  const int64_t r = e.map.shape()[1];
  return e.map.data()[(ch * r + row) * r + col];
}

double mask_sum(const EncodedDensity& e) {
  double s = 0.0;
  for (double v : e.mask.data()) s += v;
  return s;
}

// Random agent set whose center cells are at least `min_sep_cells` apart in
// Chebyshev cell-index distance (per timestep), strictly inside the BEV
// range. Cell separation >= 2 guarantees no two peak-1 cells are adjacent,
// which is the precondition of exact round-trips.
std::vector<AgentBox> random_agents(Rng& rng, int count, int64_t r,
                                    int64_t min_sep_cells) {
  const double s = static_cast<double>(r) / 32.0;
  auto cell_of = [&](const AgentBox& a) {
    return std::pair<int64_t, int64_t>(
        (r - 1) - static_cast<int64_t>(std::floor(a.x * s)),
        static_cast<int64_t>(std::floor((a.y + 16.0) * s)));
  };
  std::vector<AgentBox> agents;
  while (static_cast<int>(agents.size()) < count) {
    AgentBox a;
    a.x = rng.uniform(1.0, 31.0);
    a.y = rng.uniform(-15.0, 15.0);
    a.w = rng.uniform(0.5, 3.0);
    a.l = rng.uniform(0.5, 6.0);
    a.theta = rng.uniform(-3.1, 3.1);
    a.timestep = static_cast<int>(rng.uniform_int(3)) + 1;
    a.kind = rng.uniform() < 0.5 ? AgentKind::vehicle : AgentKind::pedestrian;
    const auto [ar, ac] = cell_of(a);
    bool ok = true;
    for (const AgentBox& b : agents) {
      if (b.timestep != a.timestep) continue;
      const auto [br, bc] = cell_of(b);
      if (std::max(std::llabs(ar - br), std::llabs(ac - bc)) < min_sep_cells)
        ok = false;
    }
    if (ok) agents.push_back(a);
  }
  return agents;
}

}  // namespace

TEST_CASE("encode: no agents gives zero heat and empty mask") {
  const EncodedDensity e = encode_density({}, 256);
  REQUIRE(e.map.shape() == Shape({21, 256, 256}));
  REQUIRE(e.mask.shape() == Shape({3, 256, 256}));
  bool all_zero = true;
  for (double v : e.map.data()) all_zero = all_zero && v == 0.0;
  for (double v : e.mask.data()) all_zero = all_zero && v == 0.0;
  CHECK(all_zero);
}

TEST_CASE("encode: agent at exact cell center stores the stated values") {
  // Cell-center x: u = x*8 = 80.5 -> x = 10.0625; same for y.
  AgentBox a;
  a.x = 10.0625;
  a.y = 0.0625;  // v = 16.0625*8 = 128.5
  a.w = 2.0;
  a.l = 4.0;
  a.theta = 0.0;
  a.timestep = 1;
  const EncodedDensity e = encode_density({a}, 256);
  const int64_t row = 255 - 80, col = 128;
  CHECK(map_at(e, 0, row, col) == 1.0);  // heat peak exactly 1
  CHECK(map_at(e, 1, row, col) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(map_at(e, 2, row, col) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(map_at(e, 3, row, col) == doctest::Approx(std::log(2.0)));
  CHECK(map_at(e, 4, row, col) == doctest::Approx(std::log(4.0)));
  CHECK(map_at(e, 5, row, col) == 0.0);        // sin 0
  CHECK(map_at(e, 6, row, col) == 1.0);        // cos 0
  CHECK(e.mask.data()[(0 * 256 + row) * 256 + col] == 1.0);
  CHECK(mask_sum(e) == 1.0);
}

TEST_CASE("encode: theta = pi/2 gives sin 1, cos ~ 0") {
  AgentBox a;
  a.x = 10.0;
  a.y = 0.0;
  a.w = 1.0;
  a.l = 2.0;
  a.theta = kPi / 2.0;
  a.timestep = 2;
  const EncodedDensity e = encode_density({a}, 256);
  const int64_t row = 255 - 80, col = 128;
  CHECK(map_at(e, 7 + 5, row, col) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(map_at(e, 7 + 6, row, col)) < 1e-12);
}

TEST_CASE("encode: timesteps land in their own channel blocks") {
  std::vector<AgentBox> agents;
  for (int t = 1; t <= 3; ++t) {
    AgentBox a;
    a.x = 8.0 * t;
    a.y = 0.0;
    a.w = 1.0;
    a.l = 1.0;
    a.timestep = t;
    agents.push_back(a);
  }
  const EncodedDensity e = encode_density(agents, 256);
  for (int t = 0; t < 3; ++t) {
    const int64_t row = 255 - static_cast<int64_t>(8.0 * (t + 1) * 8.0);
    CHECK(map_at(e, t * 7, row, 128) == 1.0);
    // The other two blocks are empty at this cell.
    for (int other = 0; other < 3; ++other)
      if (other != t) CHECK(map_at(e, other * 7, row, 128) == 0.0);
  }
  CHECK(mask_sum(e) == 3.0);
}

TEST_CASE("encode: minimum splat radius is 2 px even for tiny agents") {
  AgentBox a;
  a.x = 16.0;
  a.y = 0.0;
  a.w = 0.2;
  a.l = 0.2;
  a.timestep = 1;
  const EncodedDensity e = encode_density({a}, 256);
  const int64_t row = 255 - 128, col = 128;
  CHECK(map_at(e, 0, row, col) == 1.0);
  CHECK(map_at(e, 0, row + 2, col) > 0.0);
  CHECK(map_at(e, 0, row, col - 2) > 0.0);
  // Radius 2 splat does not reach distance 3.
  CHECK(map_at(e, 0, row + 3, col) == 0.0);
}

TEST_CASE("encode: overlapping splats combine by max, heat stays <= 1") {
  AgentBox a;
  a.x = 16.0;
  a.y = 0.0;
  a.w = 2.0;
  a.l = 4.5;
  a.timestep = 1;
  AgentBox b = a;
  b.x = 16.375;  // 3 px away: splats overlap midway
  const EncodedDensity solo = encode_density({a}, 256);
  const EncodedDensity pair = encode_density({a, b}, 256);
  double max_heat = 0.0;
  const int64_t plane = 256 * 256;
  for (int64_t i = 0; i < plane; ++i)
    max_heat = std::max(max_heat, pair.map.data()[i]);
  CHECK(max_heat == 1.0);
  // A cell between the peaks (distance 1 from a's center, 2 from b's):
  // max-combine keeps the nearer splat's value, so it equals a's solo
  // encode there, not the sum of both contributions.
  const int64_t row_mid = 255 - 129, col = 128;
  CHECK(map_at(pair, 0, row_mid, col) ==
        doctest::Approx(map_at(solo, 0, row_mid, col)));
}

TEST_CASE("encode skips out-of-range agents silently") {
  AgentBox a;
  a.x = 40.0;  // ahead of the grid
  a.y = 0.0;
  a.w = 1.0;
  a.l = 1.0;
  a.timestep = 1;
  AgentBox b = a;
  b.x = 10.0;
  b.y = -20.0;  // off to the side
  const EncodedDensity e = encode_density({a, b}, 256);
  CHECK(mask_sum(e) == 0.0);
  bool all_zero = true;
  for (double v : e.map.data()) all_zero = all_zero && v == 0.0;
  CHECK(all_zero);
}

TEST_CASE("encode rejects invariant-violating agents") {
  AgentBox bad_t;
  bad_t.x = 10;
  bad_t.y = 0;
  bad_t.w = 1;
  bad_t.l = 1;
  bad_t.timestep = 4;
  CHECK_THROWS_AS(encode_density({bad_t}, 256), ContractError);
  AgentBox bad_w = bad_t;
  bad_w.timestep = 1;
  bad_w.w = 0.0;
  CHECK_THROWS_AS(encode_density({bad_w}, 256), ContractError);
  AgentBox bad_l = bad_t;
  bad_l.timestep = 1;
  bad_l.l = -1.0;
  CHECK_THROWS_AS(encode_density({bad_l}, 256), ContractError);
}

TEST_CASE("encode is deterministic: identical inputs, bit-identical maps") {
  Rng rng(5);
  const std::vector<AgentBox> agents = random_agents(rng, 6, 256, 2);
  const EncodedDensity e1 = encode_density(agents, 256);
  const EncodedDensity e2 = encode_density(agents, 256);
  CHECK(e1.map.data() == e2.map.data());
  CHECK(e1.mask.data() == e2.mask.data());
}

TEST_CASE("decode: all-zero map gives the empty list") {
  const Tensor zero = Tensor::zeros({21, 64, 64}, Precision::f64);
  CHECK(decode_density(zero, 0.3).empty());
}

TEST_CASE("decode(encode(A)) recovers 5 random agents exactly enough") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<AgentBox> agents = random_agents(rng, 5, 256, 2);
    const EncodedDensity e = encode_density(agents, 256);
    std::vector<AgentBox> got = decode_density(e.map, 0.99);
    REQUIRE(got.size() == agents.size());
    // Match each original to the nearest decode in the same timestep.
    for (const AgentBox& a : agents) {
      double best = 1e18;
      const AgentBox* hit = nullptr;
      for (const AgentBox& g : got) {
        if (g.timestep != a.timestep) continue;
        const double d = std::hypot(g.x - a.x, g.y - a.y);
        if (d < best) {
          best = d;
          hit = &g;
        }
      }
      REQUIRE(hit != nullptr);
      CHECK(std::fabs(hit->x - a.x) < 1e-6);
      CHECK(std::fabs(hit->y - a.y) < 1e-6);
      CHECK(std::fabs(hit->w - a.w) < 1e-6);
      CHECK(std::fabs(hit->l - a.l) < 1e-6);
      CHECK(std::fabs(normalize_yaw(hit->theta - a.theta)) < 1e-9);
    }
  }
}

TEST_CASE("decode: two agents 10 m apart give exactly 2 detections") {
  AgentBox a;
  a.x = 10.0;
  a.y = -3.0;
  a.w = 2.0;
  a.l = 4.0;
  a.timestep = 1;
  AgentBox b = a;
  b.x = 20.0;
  b.y = 7.0;
  const EncodedDensity e = encode_density({a, b}, 256);
  CHECK(decode_density(e.map, 0.5).size() == 2);
}

TEST_CASE("decode: plateau ties resolve to the lower row-major index") {
  Tensor map = Tensor::zeros({21, 64, 64}, Precision::f64);
  // Two horizontally adjacent cells with identical heat 0.9.
  map.data_mut()[(0 * 64 + 10) * 64 + 20] = 0.9;
  map.data_mut()[(0 * 64 + 10) * 64 + 21] = 0.9;
  const std::vector<AgentBox> got = decode_density(map, 0.5);
  REQUIRE(got.size() == 1);
  // Winner is col 20; dx = dy = 0 here so the center is the cell corner.
  CHECK(got[0].x == doctest::Approx((64.0 - 1.0 - 10.0) / 2.0));
  CHECK(got[0].y == doctest::Approx(20.0 / 2.0 - 16.0));
}

TEST_CASE("decode monotonicity: higher threshold never finds more") {
  Rng rng(21);
  Tensor map = Tensor::zeros({21, 64, 64}, Precision::f64);
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t i = 0; i < 64 * 64; ++i)
      map.data_mut()[t * 7 * 64 * 64 + i] = rng.uniform();
  size_t prev = decode_density(map, 0.05).size();
  for (double thr : {0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95}) {
    const size_t n = decode_density(map, thr).size();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("decode validates its contract") {
  const Tensor zero = Tensor::zeros({21, 64, 64}, Precision::f64);
  CHECK_THROWS_AS(decode_density(zero, 0.0), ContractError);
  CHECK_THROWS_AS(decode_density(zero, 1.0), ContractError);
  CHECK_THROWS_AS(
      decode_density(Tensor::zeros({20, 64, 64}, Precision::f64), 0.5),
      ContractError);
  CHECK_THROWS_AS(
      decode_density(Tensor::zeros({21, 64, 32}, Precision::f64), 0.5),
      ContractError);
}

TEST_CASE("gaussian radius grows with box size") {
  const int64_t small = gaussian_radius_px(4.8, 4.8);    // pedestrian-ish
  const int64_t car = gaussian_radius_px(36.0, 16.0);    // car at 8 px/m
  const int64_t truck = gaussian_radius_px(144.0, 64.0);  // 4x the car
  CHECK(small == 2);
  CHECK(car >= small);
  CHECK(truck > car);
}

TEST_CASE("round-trip works at reduced resolution too") {
  Rng rng(31);
  const std::vector<AgentBox> agents = random_agents(rng, 4, 64, 2);
  const EncodedDensity e = encode_density(agents, 64);
  REQUIRE(e.map.shape() == Shape({21, 64, 64}));
  const std::vector<AgentBox> got = decode_density(e.map, 0.99);
  CHECK(got.size() == agents.size());
}
