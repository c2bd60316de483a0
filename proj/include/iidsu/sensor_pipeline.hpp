#pragma once

#include <cstdint>
#include <vector>

#include "iidsu/tensor.hpp"

namespace iidsu {

/// A single LiDAR return in the ego/sensor frame: x meters forward, y meters
/// rightward, z meters up (ground plane at z = 0, sensor height already
/// subtracted upstream).
struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// One LiDAR sweep. frame_time_index is <= 0 with 0 denoting the current
/// frame (-1 and -2 are the two retained past frames).
struct PointCloud {
  std::vector<LidarPoint> points;
  int frame_time_index = 0;
};

/// SE(2) ego pose in the world frame. yaw is radians, normalized to
/// (-pi, pi]; rotation is counterclockwise in the (x, y) plane.
struct EgoPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

/// Wraps an angle to (-pi, pi].
double normalize_yaw(double yaw);

/// Geometry and normalization knobs of the BEV rasterizer.
///
/// The grid always covers 32 m ahead of the vehicle and 16 m to each side;
/// `r` sets the pixel resolution of that fixed extent, so the default
/// r = 256 gives the canonical 8 px/m.
struct SensorConfig {
  int64_t r = 256;           // grid is r x r cells
  double z_ground = 0.2;     // z <= z_ground counts as "at ground level" (m)
  int64_t cell_cap = 16;     // per-cell count cap before normalization
  int64_t crop_row_offset = 44;  // first raw row of the camera crop

  double px_per_m() const { return static_cast<double>(r) / 32.0; }
  void validate() const;
};

/// Two-bin BEV occupancy histogram: integer point counts per cell, bin 0 for
/// at/below-ground returns and bin 1 for above-ground returns. Layout is
/// row-major with the bin index innermost: counts[(row * r + col) * 2 + bin].
struct BevHistogram {
  int64_t r = 0;
  std::vector<int64_t> counts;
  int64_t discarded = 0;  // diagnostics tally of out-of-range points

  int64_t at(int64_t row, int64_t col, int64_t bin) const {
    return counts[(row * r + col) * 2 + bin];
  }
  int64_t& at_mut(int64_t row, int64_t col, int64_t bin) {
    return counts[(row * r + col) * 2 + bin];
  }
  /// Sum of all cells (== number of in-range input points).
  int64_t total() const;
};

/// Rigidly re-expresses a cloud measured in the `from` ego frame in the `to`
/// ego frame (SE(2) on x/y; z is carried through unchanged). Composing with
/// the swapped-pose transform is the identity to within rounding.
PointCloud transform_points(const PointCloud& pc, const EgoPose& from,
                            const EgoPose& to);

/// Bins a cloud into the two-bin BEV histogram. In-range test is the
/// half-open box 0 <= x < 32, -16 <= y < 16 so every point maps to exactly
/// one cell: row = (r-1) - floor(x*s), col = floor((y+16)*s) with
/// s = px_per_m (forward = up in grid coordinates). Out-of-range points are
/// silently discarded and tallied in `discarded`.
BevHistogram rasterize_bev(const PointCloud& pc, const SensorConfig& cfg = {});

/// Stacks three aligned per-frame histograms (oldest -> current) into the
/// {4, r, r} LiDAR pseudo-image: channel 0 is the elementwise sum of the
/// three ground bins, channels 1..3 are the per-frame above-ground bins.
/// Counts become floats by min(count, cell_cap) / cell_cap.
///
/// `poses` records the alignment (one pose per frame, oldest -> current);
/// the histograms must have been rasterized from clouds already transformed
/// into poses.back() via transform_points. The poses are contract-checked
/// (count and finiteness), not re-applied.
Tensor stack_frames(const std::vector<BevHistogram>& hists,
                    const std::vector<EgoPose>& poses,
                    const SensorConfig& cfg = {});

/// Convenience path used by the dataset and the simulator: aligns every
/// cloud to the last pose, rasterizes each, and stacks.
Tensor build_pseudo_image(const std::vector<PointCloud>& clouds,
                          const std::vector<EgoPose>& poses,
                          const SensorConfig& cfg = {});

/// Crops a raw 400x300 camera image (tensor {3, 300, 400}, byte values
/// 0..255) to the {3, 256, 256} network input scaled to [0, 1]. The crop is
/// horizontally centered (columns 72..327) and vertically anchored to the
/// bottom road-dominant region by default (rows crop_row_offset ..
/// crop_row_offset+255).
Tensor crop_image(const Tensor& raw, const SensorConfig& cfg = {});

}  // namespace iidsu
