#include "iidsu/sensor_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace iidsu {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kForwardExtent = 32.0;  // m ahead of the vehicle
constexpr double kSideExtent = 16.0;     // m to each side
constexpr int64_t kCropSize = 256;
constexpr int64_t kRawWidth = 400;
constexpr int64_t kRawHeight = 300;

bool finite_pose(const EgoPose& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.yaw);
}

}  // namespace

double normalize_yaw(double yaw) {
  double y = std::remainder(yaw, 2.0 * kPi);  // (-pi, pi) plus +/-pi edge
  if (y <= -kPi) y += 2.0 * kPi;
  return y;
}

void SensorConfig::validate() const {
  if (r < 8) throw ConfigError("SensorConfig: r must be at least 8");
  if (!(z_ground >= -10.0 && z_ground <= 10.0))
    throw ConfigError("SensorConfig: z_ground out of sane range");
  if (cell_cap < 1) throw ConfigError("SensorConfig: cell_cap must be >= 1");
  if (crop_row_offset < 0 || crop_row_offset + kCropSize > kRawHeight)
    throw ConfigError("SensorConfig: crop_row_offset leaves the raw image");
}

int64_t BevHistogram::total() const {
  int64_t s = 0;
  for (int64_t c : counts) s += c;
  return s;
}

PointCloud transform_points(const PointCloud& pc, const EgoPose& from,
                            const EgoPose& to) {
  if (!finite_pose(from) || !finite_pose(to))
    throw ContractError("transform_points: poses must be finite");
  const double cf = std::cos(from.yaw), sf = std::sin(from.yaw);
  const double ct = std::cos(to.yaw), st = std::sin(to.yaw);
  PointCloud out;
  out.frame_time_index = pc.frame_time_index;
  out.points.reserve(pc.points.size());
  for (const LidarPoint& p : pc.points) {
    // from-frame -> world
    const double wx = from.x + cf * p.x - sf * p.y;
    const double wy = from.y + sf * p.x + cf * p.y;
    // world -> to-frame (inverse rotation)
    const double dx = wx - to.x, dy = wy - to.y;
    out.points.push_back({ct * dx + st * dy, -st * dx + ct * dy, p.z});
  }
  return out;
}

BevHistogram rasterize_bev(const PointCloud& pc, const SensorConfig& cfg) {
  cfg.validate();
  BevHistogram h;
  h.r = cfg.r;
  h.counts.assign(static_cast<size_t>(cfg.r) * cfg.r * 2, 0);
  const double s = cfg.px_per_m();
  for (const LidarPoint& p : pc.points) {
    // Half-open box; NaN coordinates fail the comparisons and are discarded.
    if (!(p.x >= 0.0 && p.x < kForwardExtent && p.y >= -kSideExtent &&
          p.y < kSideExtent)) {
      ++h.discarded;
      continue;
    }
    const int64_t row = (cfg.r - 1) - static_cast<int64_t>(std::floor(p.x * s));
    const int64_t col = static_cast<int64_t>(std::floor((p.y + kSideExtent) * s));
    const int64_t bin = p.z <= cfg.z_ground ? 0 : 1;
    ++h.at_mut(row, col, bin);
  }
  return h;
}

Tensor stack_frames(const std::vector<BevHistogram>& hists,
                    const std::vector<EgoPose>& poses,
                    const SensorConfig& cfg) {
  cfg.validate();
  if (hists.size() != 3)
    throw ContractError("stack_frames: need exactly 3 frames, got " +
                        std::to_string(hists.size()));
  if (poses.size() != 3)
    throw ContractError("stack_frames: need exactly 3 poses, got " +
                        std::to_string(poses.size()));
  for (const EgoPose& p : poses)
    if (!finite_pose(p)) throw ContractError("stack_frames: non-finite pose");
  for (const BevHistogram& h : hists)
    if (h.r != cfg.r)
      throw ContractError("stack_frames: histogram resolution " +
                          std::to_string(h.r) + " does not match config r " +
                          std::to_string(cfg.r));

  Tensor out = Tensor::zeros({4, cfg.r, cfg.r}, Precision::f64);
  std::vector<double>& o = out.data_mut();
  const int64_t plane = cfg.r * cfg.r;
  const double cap = static_cast<double>(cfg.cell_cap);
  for (int64_t cell = 0; cell < plane; ++cell) {
    const int64_t ground = hists[0].counts[cell * 2 + 0] +
                           hists[1].counts[cell * 2 + 0] +
                           hists[2].counts[cell * 2 + 0];
    o[cell] = static_cast<double>(std::min(ground, cfg.cell_cap)) / cap;
    for (int64_t f = 0; f < 3; ++f) {
      const int64_t above = hists[f].counts[cell * 2 + 1];
      o[(f + 1) * plane + cell] =
          static_cast<double>(std::min(above, cfg.cell_cap)) / cap;
    }
  }
  return out;
}

Tensor build_pseudo_image(const std::vector<PointCloud>& clouds,
                          const std::vector<EgoPose>& poses,
                          const SensorConfig& cfg) {
  if (clouds.size() != 3 || poses.size() != 3)
    throw ContractError("build_pseudo_image: need exactly 3 clouds and poses");
  std::vector<BevHistogram> hists;
  hists.reserve(3);
  for (size_t i = 0; i < 3; ++i)
    hists.push_back(
        rasterize_bev(transform_points(clouds[i], poses[i], poses.back()), cfg));
  return stack_frames(hists, poses, cfg);
}

Tensor crop_image(const Tensor& raw, const SensorConfig& cfg) {
  cfg.validate();
  const Shape want = {3, kRawHeight, kRawWidth};
  if (raw.shape() != want)
    throw ContractError("crop_image: raw image must be {3, 300, 400}, got " +
                        shape_str(raw.shape()));
  const int64_t col0 = (kRawWidth - kCropSize) / 2;  // 72: centered crop
  const int64_t row0 = cfg.crop_row_offset;
  Tensor out = Tensor::zeros({3, kCropSize, kCropSize}, Precision::f64);
  const std::vector<double>& in = raw.data();
  std::vector<double>& o = out.data_mut();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < kCropSize; ++y)
      for (int64_t x = 0; x < kCropSize; ++x)
        o[(c * kCropSize + y) * kCropSize + x] =
            in[(c * kRawHeight + row0 + y) * kRawWidth + col0 + x] / 255.0;
  return out;
}

}  // namespace iidsu
