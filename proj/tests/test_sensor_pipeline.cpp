#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "iidsu/nn.hpp"
#include "iidsu/sensor_pipeline.hpp"

using namespace iidsu;

namespace {

// Independent binning oracle: per-point index arithmetic straight from the
// stated mapping, accumulated into a flat array.
struct OracleGrid {
  std::vector<int64_t> counts;
  int64_t discarded = 0;
};

OracleGrid oracle_bin(const std::vector<LidarPoint>& pts, int64_t r,
                      double z_ground) {
  OracleGrid g;
  g.counts.assign(static_cast<size_t>(r) * r * 2, 0);
  const double s = static_cast<double>(r) / 32.0;
  for (const LidarPoint& p : pts) {
    // Stated in the in-range form so NaN coordinates fail it and discard.
    if (!(p.x >= 0.0 && p.x < 32.0 && p.y >= -16.0 && p.y < 16.0)) {
      ++g.discarded;
      continue;
    }
    const int64_t row = (r - 1) - static_cast<int64_t>(std::floor(p.x * s));
    const int64_t col = static_cast<int64_t>(std::floor((p.y + 16.0) * s));
    const int64_t bin = p.z <= z_ground ? 0 : 1;
    ++g.counts[static_cast<size_t>((row * r + col) * 2 + bin)];
  }
  return g;
}

}  // namespace

TEST_CASE("transform_points: identity when poses coincide") {
  PointCloud pc;
  pc.points = {{1.0, 2.0, 0.5}, {-3.0, 0.25, -0.1}};
  EgoPose pose{5.0, -2.0, 0.7};
  const PointCloud out = transform_points(pc, pose, pose);
  REQUIRE(out.points.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(out.points[i].x == doctest::Approx(pc.points[i].x).epsilon(1e-12));
    CHECK(out.points[i].y == doctest::Approx(pc.points[i].y).epsilon(1e-12));
    CHECK(out.points[i].z == pc.points[i].z);
  }
}

TEST_CASE("transform_points: pure translation") {
  PointCloud pc;
  pc.points = {{0.0, 0.0, 0.0}};
  const PointCloud out =
      transform_points(pc, EgoPose{0, 0, 0}, EgoPose{1, 0, 0});
  CHECK(out.points[0].x == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(out.points[0].y == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("transform_points: random pose round-trip within 1e-9") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    EgoPose a{rng.uniform(-100, 100), rng.uniform(-100, 100),
              rng.uniform(-3.1, 3.1)};
    EgoPose b{rng.uniform(-100, 100), rng.uniform(-100, 100),
              rng.uniform(-3.1, 3.1)};
    PointCloud pc;
    pc.frame_time_index = -1;
    for (int i = 0; i < 50; ++i)
      pc.points.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50),
                           rng.uniform(-2, 2)});
    const PointCloud back =
        transform_points(transform_points(pc, a, b), b, a);
    REQUIRE(back.points.size() == pc.points.size());
    CHECK(back.frame_time_index == -1);
    double max_err = 0.0;
    for (size_t i = 0; i < pc.points.size(); ++i) {
      max_err = std::max(max_err, std::fabs(back.points[i].x - pc.points[i].x));
      max_err = std::max(max_err, std::fabs(back.points[i].y - pc.points[i].y));
      max_err = std::max(max_err, std::fabs(back.points[i].z - pc.points[i].z));
    }
    CHECK(max_err < 1e-9);
  }
}

TEST_CASE("transform_points rejects non-finite poses") {
  PointCloud pc;
  pc.points = {{1, 1, 1}};
  CHECK_THROWS_AS(
      transform_points(pc, EgoPose{std::nan(""), 0, 0}, EgoPose{}),
      ContractError);
}

TEST_CASE("normalize_yaw wraps into (-pi, pi]") {
  const double pi = 3.141592653589793238462643383279502884;
  CHECK(normalize_yaw(0.0) == 0.0);
  CHECK(normalize_yaw(pi) == doctest::Approx(pi));
  CHECK(normalize_yaw(-pi) == doctest::Approx(pi));  // -pi maps to +pi
  CHECK(normalize_yaw(3 * pi) == doctest::Approx(pi));
  CHECK(normalize_yaw(2 * pi + 0.25) == doctest::Approx(0.25));
  CHECK(normalize_yaw(-2 * pi - 0.25) == doctest::Approx(-0.25));
}

TEST_CASE("rasterize_bev: empty cloud gives all-zero grid") {
  const BevHistogram h = rasterize_bev(PointCloud{});
  CHECK(h.r == 256);
  CHECK(h.total() == 0);
  CHECK(h.discarded == 0);
}

TEST_CASE("rasterize_bev: single origin point lands at row 255, col 128") {
  PointCloud pc;
  pc.points = {{0.0, 0.0, 1.0}};
  const BevHistogram h = rasterize_bev(pc);
  CHECK(h.at(255, 128, 1) == 1);
  CHECK(h.at(255, 128, 0) == 0);
  CHECK(h.total() == 1);
}

TEST_CASE("rasterize_bev matches the naive binning oracle exactly") {
  Rng rng(77);
  PointCloud pc;
  for (int i = 0; i < 1000; ++i)
    pc.points.push_back(
        {rng.uniform(0.0, 32.0), rng.uniform(-16.0, 16.0),
         rng.uniform(-0.5, 3.0)});
  const SensorConfig cfg;
  const BevHistogram h = rasterize_bev(pc, cfg);
  const OracleGrid o = oracle_bin(pc.points, cfg.r, cfg.z_ground);
  CHECK(h.total() == 1000);
  CHECK(h.discarded == 0);
  bool all_equal = true;
  for (size_t i = 0; i < o.counts.size(); ++i)
    all_equal = all_equal && (h.counts[i] == o.counts[i]);
  CHECK(all_equal);
}

TEST_CASE("rasterize_bev conserves counts with out-of-range points") {
  Rng rng(78);
  PointCloud pc;
  for (int i = 0; i < 2000; ++i)
    pc.points.push_back({rng.uniform(-10.0, 42.0), rng.uniform(-26.0, 26.0),
                         rng.uniform(-0.5, 3.0)});
  pc.points.push_back({std::nan(""), 0.0, 0.0});  // NaN is discarded, not UB
  const BevHistogram h = rasterize_bev(pc);
  const OracleGrid o = oracle_bin(pc.points, 256, 0.2);
  CHECK(h.total() + h.discarded == static_cast<int64_t>(pc.points.size()));
  CHECK(h.discarded == o.discarded);
  bool all_equal = true;
  for (size_t i = 0; i < o.counts.size(); ++i)
    all_equal = all_equal && (h.counts[i] == o.counts[i]);
  CHECK(all_equal);
}

TEST_CASE("rasterize_bev boundary convention is half-open") {
  PointCloud pc;
  pc.points = {{31.999999, 0.0, 0.0},   // in: just inside the far edge
               {32.0, 0.0, 0.0},        // out: x == 32
               {0.0, -16.0, 0.0},       // in: y == -16 is included
               {0.0, 16.0, 0.0},        // out: y == 16
               {-1e-12, 0.0, 0.0}};     // out: x < 0
  const BevHistogram h = rasterize_bev(pc);
  CHECK(h.total() == 2);
  CHECK(h.discarded == 3);
  CHECK(h.at(0, 128, 0) == 1);   // x=31.999999 -> row 255-255 = 0
  CHECK(h.at(255, 0, 0) == 1);   // y=-16 -> col 0
}

TEST_CASE("rasterize_bev separates ground and above-ground at z_ground") {
  PointCloud pc;
  pc.points = {{1.0, 1.0, 0.2},    // exactly at threshold -> ground
               {1.0, 1.0, 0.2001},  // just above -> above
               {1.0, 1.0, -0.3}};  // below -> ground
  const BevHistogram h = rasterize_bev(pc);
  const int64_t row = 255 - 8, col = (1 + 16) * 8;
  CHECK(h.at(row, col, 0) == 2);
  CHECK(h.at(row, col, 1) == 1);
}

TEST_CASE("alignment invariance: aligned past frame bins like the current") {
  // A static world observed from two poses. Transforming the past-frame
  // cloud to the current pose must reproduce the directly-observed grid
  // cell-for-cell (points kept away from cell boundaries).
  Rng rng(99);
  const EgoPose past{3.0, -1.0, 0.3};
  const EgoPose now{5.5, 0.5, 0.55};
  const double s = 8.0;
  std::vector<LidarPoint> world;
  const double cn = std::cos(now.yaw), sn = std::sin(now.yaw);
  while (world.size() < 500) {
    // Sample directly in the current frame at cell centers, then push to
    // world coordinates; cell centers are >= 1/16 m from every boundary.
    const double fx =
        (std::floor(rng.uniform(0.0, 32.0) * s) + 0.5) / s;
    const double fy =
        (std::floor(rng.uniform(-16.0, 16.0) * s + 16.0 * s) + 0.5) / s - 16.0;
    const double wx = now.x + cn * fx - sn * fy;
    const double wy = now.y + sn * fx + cn * fy;
    world.push_back({wx, wy, rng.uniform(-0.5, 2.0)});
  }
  auto observe = [&](const EgoPose& pose) {
    PointCloud pc;
    const double c = std::cos(pose.yaw), si = std::sin(pose.yaw);
    for (const LidarPoint& w : world) {
      const double dx = w.x - pose.x, dy = w.y - pose.y;
      pc.points.push_back({c * dx + si * dy, -si * dx + c * dy, w.z});
    }
    return pc;
  };
  const BevHistogram direct = rasterize_bev(observe(now));
  const BevHistogram aligned =
      rasterize_bev(transform_points(observe(past), past, now));
  REQUIRE(direct.total() == 500);
  bool all_equal = true;
  for (size_t i = 0; i < direct.counts.size(); ++i)
    all_equal = all_equal && (direct.counts[i] == aligned.counts[i]);
  CHECK(all_equal);
}

TEST_CASE("stack_frames: static scene gives identical above-ground channels") {
  PointCloud pc;
  pc.points = {{4.0, 2.0, 1.0}, {10.0, -3.0, 0.5}, {1.0, 0.0, 0.1}};
  const BevHistogram h = rasterize_bev(pc);
  const std::vector<EgoPose> poses(3);
  const Tensor img = stack_frames({h, h, h}, poses);
  REQUIRE(img.shape() == Shape({4, 256, 256}));
  const int64_t plane = 256 * 256;
  const std::vector<double>& d = img.data();
  bool channels_match = true;
  for (int64_t i = 0; i < plane; ++i)
    channels_match = channels_match && d[plane + i] == d[2 * plane + i] &&
                     d[plane + i] == d[3 * plane + i];
  CHECK(channels_match);
  // Ground channel: one ground point per frame in the same cell -> count 3.
  const int64_t row = 255 - 8, col = 128;
  CHECK(d[row * 256 + col] == doctest::Approx(3.0 / 16.0));
}

TEST_CASE("stack_frames: a moving point occupies different cells per frame") {
  // One obstacle moving forward at 2 m/frame, ego static: after alignment
  // (identity here) the per-frame histograms see it at x = 6, 8, 10.
  std::vector<BevHistogram> hists;
  for (int f = 0; f < 3; ++f) {
    PointCloud pc;
    pc.frame_time_index = f - 2;
    pc.points = {{6.0 + 2.0 * f + 0.01, 0.0, 1.0}};
    hists.push_back(rasterize_bev(pc));
  }
  const Tensor img = stack_frames(hists, std::vector<EgoPose>(3));
  const std::vector<double>& d = img.data();
  const int64_t plane = 256 * 256;
  auto cell = [&](int ch, double x) {
    const int64_t row = 255 - static_cast<int64_t>(std::floor(x * 8.0));
    return d[ch * plane + row * 256 + 128];
  };
  CHECK(cell(1, 6.01) == doctest::Approx(1.0 / 16.0));
  CHECK(cell(2, 8.01) == doctest::Approx(1.0 / 16.0));
  CHECK(cell(3, 10.01) == doctest::Approx(1.0 / 16.0));
  // Each frame's cell is empty in the other frames' channels.
  CHECK(cell(1, 8.01) == 0.0);
  CHECK(cell(2, 6.01) == 0.0);
  CHECK(cell(3, 8.01) == 0.0);
}

TEST_CASE("stack_frames: all-empty frames give the zero pseudo-image") {
  const BevHistogram h = rasterize_bev(PointCloud{});
  const Tensor img = stack_frames({h, h, h}, std::vector<EgoPose>(3));
  const std::vector<double>& d = img.data();
  bool all_zero = true;
  for (int64_t i = 0; i < img.numel(); ++i) all_zero = all_zero && d[i] == 0.0;
  CHECK(all_zero);
}

TEST_CASE("stack_frames sums ground counts before capping") {
  // Per-frame ground counts 3, 5, 9 in one cell: sum 17 caps at 16 -> 1.0.
  // A second cell with 1, 2, 3 stays below the cap -> 6/16.
  std::vector<BevHistogram> hists;
  const int64_t g1[3] = {3, 5, 9}, g2[3] = {1, 2, 3};
  for (int f = 0; f < 3; ++f) {
    PointCloud pc;
    for (int64_t i = 0; i < g1[f]; ++i) pc.points.push_back({2.0, 0.0, 0.0});
    for (int64_t i = 0; i < g2[f]; ++i) pc.points.push_back({4.0, 0.0, 0.0});
    hists.push_back(rasterize_bev(pc));
  }
  const Tensor img = stack_frames(hists, std::vector<EgoPose>(3));
  const std::vector<double>& d = img.data();
  CHECK(d[(255 - 16) * 256 + 128] == doctest::Approx(1.0));
  CHECK(d[(255 - 32) * 256 + 128] == doctest::Approx(6.0 / 16.0));
}

TEST_CASE("stack_frames enforces the frame-count contract") {
  const BevHistogram h = rasterize_bev(PointCloud{});
  CHECK_THROWS_AS(stack_frames({h, h}, std::vector<EgoPose>(2)),
                  ContractError);
  CHECK_THROWS_AS(stack_frames({h, h, h, h}, std::vector<EgoPose>(4)),
                  ContractError);
  CHECK_THROWS_AS(stack_frames({h, h, h}, std::vector<EgoPose>(2)),
                  ContractError);
}

TEST_CASE("build_pseudo_image aligns past clouds before stacking") {
  // Static world point; the ego advances 1 m per frame. After alignment all
  // three above-ground channels mark the same cell.
  const LidarPoint world{10.0, 0.0, 1.0};
  std::vector<PointCloud> clouds(3);
  std::vector<EgoPose> poses;
  for (int f = 0; f < 3; ++f) {
    const EgoPose pose{static_cast<double>(f), 0.0, 0.0};
    poses.push_back(pose);
    clouds[f].frame_time_index = f - 2;
    clouds[f].points = {{world.x - pose.x, world.y - pose.y, world.z}};
  }
  const Tensor img = build_pseudo_image(clouds, poses);
  const std::vector<double>& d = img.data();
  const int64_t plane = 256 * 256;
  const int64_t row = 255 - static_cast<int64_t>(std::floor((10.0 - 2.0) * 8));
  for (int ch = 1; ch <= 3; ++ch)
    CHECK(d[ch * plane + row * 256 + 128] == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("crop_image: uniform gray stays uniform and scales to [0,1]") {
  const Tensor raw = Tensor::full({3, 300, 400}, 128.0, Precision::f64);
  const Tensor out = crop_image(raw);
  REQUIRE(out.shape() == Shape({3, 256, 256}));
  const std::vector<double>& d = out.data();
  bool uniform = true;
  for (int64_t i = 0; i < out.numel(); ++i)
    uniform = uniform && d[i] == 128.0 / 255.0;
  CHECK(uniform);
}

TEST_CASE("crop_image: white pixel at raw (row 200, col 200) maps to col 128") {
  Tensor raw = Tensor::zeros({3, 300, 400}, Precision::f64);
  for (int64_t c = 0; c < 3; ++c)
    raw.data_mut()[(c * 300 + 200) * 400 + 200] = 255.0;
  const Tensor out = crop_image(raw);
  const std::vector<double>& d = out.data();
  const int64_t crop_row = 200 - 44;
  CHECK(d[(0 * 256 + crop_row) * 256 + 128] == doctest::Approx(1.0));
  // Neighbors stay black.
  CHECK(d[(0 * 256 + crop_row) * 256 + 127] == 0.0);
  CHECK(d[(0 * 256 + crop_row - 1) * 256 + 128] == 0.0);
}

TEST_CASE("crop_image matches the index-arithmetic oracle") {
  Tensor raw = Tensor::zeros({3, 300, 400}, Precision::f64);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 300; ++y)
      for (int64_t x = 0; x < 400; ++x)
        raw.data_mut()[(c * 300 + y) * 400 + x] =
            static_cast<double>((c * 131 + y * 7 + x * 3) % 256);
  const Tensor out = crop_image(raw);
  const std::vector<double>& d = out.data();
  bool all_equal = true;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 256; ++y)
      for (int64_t x = 0; x < 256; ++x) {
        const double want =
            static_cast<double>((c * 131 + (y + 44) * 7 + (x + 72) * 3) % 256) /
            255.0;
        all_equal =
            all_equal && d[(c * 256 + y) * 256 + x] == want;
      }
  CHECK(all_equal);
}

TEST_CASE("crop_image rejects wrong extents") {
  CHECK_THROWS_AS(crop_image(Tensor::zeros({3, 256, 256}, Precision::f64)),
                  ContractError);
  CHECK_THROWS_AS(crop_image(Tensor::zeros({3, 400, 300}, Precision::f64)),
                  ContractError);
  CHECK_THROWS_AS(crop_image(Tensor::zeros({1, 300, 400}, Precision::f64)),
                  ContractError);
}

TEST_CASE("reduced-resolution grids keep the fixed 32 m x 32 m extent") {
  SensorConfig cfg;
  cfg.r = 64;  // 2 px/m
  PointCloud pc;
  pc.points = {{0.0, 0.0, 1.0}, {31.9, 15.9, 0.0}};
  const BevHistogram h = rasterize_bev(pc, cfg);
  CHECK(h.at(63, 32, 1) == 1);
  CHECK(h.at(0, 63, 0) == 1);
  CHECK(h.total() == 2);
}
