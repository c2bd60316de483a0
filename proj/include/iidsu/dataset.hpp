#pragma once

// On-disk frame format, label schema, and assembly of network samples.
//
// A dataset is a directory of `frame_%06d/` folders plus a `manifest.txt`.
// Each frame folder holds:
//   lidar_t0.bin / lidar_t-1.bin / lidar_t-2.bin  little-endian float32 xyz
//   pose_t0.txt  / pose_t-1.txt  / pose_t-2.txt   "x y yaw" text
//   image.ppm                                      400x300 P6 camera frame
//   labels.txt                                     one typed record per line
//
// labels.txt schema (order-free except waypoint/route/agent line order):
//   waypoint <x> <y>                       exactly 4 lines, ego frame, m
//   agent <timestep> <kind> <x> <y> <w> <l> <theta>   future boxes, ego frame
//   route <x> <y>                          >= 2 route vertices, ego frame
//   lane_half_width <m>
//   goal <x> <y>                           lookahead target, ego frame
//   light_red <0|1>
//   sign_present <0|1>
//   weather <sunny|cloudy|rainy|foggy>
// Unknown records, wrong arity, or missing required records throw IoError.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iidsu/fusion_model.hpp"
#include "iidsu/sim_harness.hpp"

namespace iidsu {

/// "frame_%06d" directory name for a frame index.
std::string frame_dir_name(size_t index);

std::string serialize_labels(const FrameLabels& labels);
FrameLabels parse_labels(const std::string& text);

/// Writes one captured frame into `dir` (created if absent).
void write_frame(const std::string& dir, const SensorBundle& bundle);
/// Reads a frame folder back; missing files throw one IoError listing
/// every absent name.
SensorBundle read_frame(const std::string& dir);

/// Weather-tag census over the generated frames.
void write_manifest(const std::string& root, size_t frames,
                    const std::array<size_t, 4>& weather_counts,
                    uint64_t seed);

/// A scanned dataset directory (sorted frame folders; empty -> IoError).
class Dataset {
 public:
  explicit Dataset(std::string root);
  size_t size() const { return dirs_.size(); }
  const std::string& dir(size_t i) const;
  SensorBundle frame(size_t i) const;

 private:
  std::string root_;
  std::vector<std::string> dirs_;
};

/// One network-ready training sample at the model's resolution.
struct ModelSample {
  Tensor image;         // {3, r, r} in [0, 1]
  Tensor lidar;         // {4, r, r} pseudo-image
  Tensor goal;          // {2} scaled lookahead
  Tensor waypoints;     // {4, 2} expert target
  Tensor density_map;   // {21, r, r} encoded future agents
  Tensor density_mask;  // {3, r, r} supervision mask
  Tensor bev;           // {r, r} class ids
  Tensor traffic;       // {2} rule targets
  int weather = 0;      // class id 0..3
};

/// Rasterizes a captured frame into model inputs and targets at cfg.r.
/// The camera path needs cfg.r to divide 256 (the crop is average-pooled
/// down); other resolutions throw ContractError.
ModelSample assemble_sample(const SensorBundle& bundle,
                            const ModelConfig& cfg);

/// Drives the scripted expert through `scenario` until `capture_time` and
/// returns the sensor capture there. capture_time must leave room for the
/// three-snapshot history (>= 1.0 s); the route ending earlier is fine.
SensorBundle collect_expert_frame(const Scenario& scenario,
                                  double capture_time);

/// Closed-loop policy that runs the model on synthesized sensors and turns
/// the predicted waypoints into a command via the PID controller. The model
/// reference must outlive the returned policy.
DrivePolicy make_model_policy(const FusionModel& model,
                              const ControllerConfig& ctrl);

}  // namespace iidsu
