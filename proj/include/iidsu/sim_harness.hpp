#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "iidsu/controller.hpp"
#include "iidsu/density_codec.hpp"
#include "iidsu/sensor_pipeline.hpp"
#include "iidsu/tensor.hpp"

namespace iidsu {

// ---------------------------------------------------------------------------
// Weather and NPC behavior
// ---------------------------------------------------------------------------

/// Weather tag. The integer value is the weather-head class id.
enum class Weather : uint8_t { sunny = 0, cloudy = 1, rainy = 2, foggy = 3 };
constexpr int kWeatherClasses = 4;
const char* weather_name(Weather w);
Weather weather_from_name(const std::string& name);  // ContractError if unknown

/// NPC driving style. Sunny/cloudy scenarios draw Normal or Aggressive
/// uniformly; rainy/foggy scenarios force Cautious.
enum class BehaviorClass : uint8_t { normal = 0, aggressive = 1, cautious = 2 };
const char* behavior_name(BehaviorClass c);
BehaviorClass behavior_from_name(const std::string& name);

/// Car-following parameters of a behavior class.
struct BehaviorParams {
  double speed_limit = 6.0;   // m/s
  double time_gap = 1.5;      // s
  double min_distance = 4.0;  // m
};
/// Normal (6, 1.5, 4), Aggressive (8, 1.0, 2), Cautious (4, 2.5, 6).
BehaviorParams behavior_params(BehaviorClass c);

/// Scripted-expert cruise speed per weather tag; rainy/foggy drive slower
/// than sunny/cloudy so the label distribution carries the coupling.
double expert_cruise(Weather w);

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

/// Axis-oriented box in the world plane: center, heading, width (across) and
/// length (along the heading).
struct ObbBox {
  double x = 0.0, y = 0.0, yaw = 0.0;
  double w = 1.0, l = 1.0;
};
/// Exact separating-axis overlap test for two oriented boxes.
bool boxes_overlap(const ObbBox& a, const ObbBox& b);

/// A lane-following NPC vehicle, parameterized by its arc-length position on
/// the route polyline.
struct SimAgent {
  double route_s = 0.0;  // m along the route (box center)
  double speed = 0.0;    // m/s, >= 0
  double w = 2.0, l = 4.5;
  BehaviorClass behavior = BehaviorClass::normal;
};

/// A (static) pedestrian standing in the world.
struct Pedestrian {
  double x = 0.0, y = 0.0, yaw = 0.0;
  double w = 0.6, l = 0.6;
};

/// Traffic light and its periodic schedule. The stop line sits at `route_s`;
/// the lamp housing is at (x, y) roadside for rendering.
struct TrafficLight {
  double route_s = 0.0;
  double green_time = 6.0, red_time = 4.0, phase = 0.0;
  double x = 0.0, y = 0.0;
  /// Red iff fmod(t + phase, green + red) >= green.
  bool red_at(double t) const;
  /// True if the light is (or turns) red anywhere in [t, t + horizon].
  bool red_within(double t, double horizon) const;
};

struct StopSign {
  double route_s = 0.0;
  double x = 0.0, y = 0.0;
};

/// Everything that defines one closed-loop episode.
struct Scenario {
  std::vector<std::array<double, 2>> route;  // world polyline, >= 2 points
  double lane_half_width = 3.5;              // m
  std::vector<ObbBox> layout;                // static roadside obstacles
  std::vector<SimAgent> agents;
  std::vector<Pedestrian> pedestrians;
  std::vector<TrafficLight> lights;
  std::vector<StopSign> signs;
  Weather weather = Weather::sunny;
  uint64_t seed = 0;
  int difficulty = 0;

  void validate() const;  // ContractError on violated invariants
  /// Deterministic text form (line-oriented, %.17g floats) used for replay
  /// files and bit-equality checks.
  std::string serialize() const;
};

/// Deterministic scenario sampler. Difficulty 0 is the empty 100 m straight;
/// higher difficulties add route bends, NPC vehicles, pedestrians, lights,
/// signs and roadside layout. Weather is drawn uniformly and constrains the
/// NPC behavior classes (Cautious on rainy/foggy).
Scenario generate_scenario(uint64_t seed, int difficulty);

/// A matched pair probe: identical straight route with one Normal lead
/// vehicle, differing only in the weather tag. Used for the qualitative
/// weather-conditioning experiment.
Scenario matched_lead_scenario(Weather w);

// ---------------------------------------------------------------------------
// Route geometry
// ---------------------------------------------------------------------------

/// Pose of a point at arc length s along a polyline.
struct RouteFrame {
  double x = 0.0, y = 0.0, yaw = 0.0;
};

/// Cumulative arc-length view of a route polyline with projection. s values
/// beyond the ends extrapolate along the terminal segments so vehicles can
/// drive off the route without snapping.
class RoutePath {
 public:
  RoutePath() = default;
  explicit RoutePath(const std::vector<std::array<double, 2>>& pts);

  double length() const { return cum_.empty() ? 0.0 : cum_.back(); }
  RouteFrame at(double s) const;
  /// Closest-point projection: arc length (clamped to [0, length]) and
  /// signed lateral offset, positive to the right of the route heading.
  void project(double x, double y, double* s, double* lateral) const;

 private:
  std::vector<std::array<double, 2>> pts_;
  std::vector<double> cum_;
};

// ---------------------------------------------------------------------------
// Infractions and metrics
// ---------------------------------------------------------------------------

/// The eight infraction kinds of the evaluation taxonomy.
enum class InfractionKind : uint8_t {
  Ped = 0,   // collision with a pedestrian
  Veh = 1,   // collision with a vehicle
  Lay = 2,   // collision with the scene layout
  Red = 3,   // red light crossing
  OR = 4,    // off-road longer than the grace window
  Dev = 5,   // route deviation (terminates)
  TO = 6,    // route timeout (terminates)
  Block = 7  // agent blocked (terminates)
};
const char* infraction_name(InfractionKind k);

struct InfractionEvent {
  InfractionKind kind = InfractionKind::Ped;
  double time = 0.0;  // s
  double x = 0.0, y = 0.0;
};

/// Thresholds of the infraction detectors. A non-positive timeout budget is
/// filled per route from 2x the scripted expert's estimated time.
struct InfractionConfig {
  double offroad_window = 1.0;  // s off the drivable band before OR fires
  double dev_threshold = 8.0;   // m lateral: route deviation (terminal)
  double block_speed = 0.1;     // m/s
  double block_window = 9.0;    // s below block_speed (desk-scaled 90 s)
  double timeout_budget = 0.0;  // s; <= 0 means derive from the expert time
};

/// Multiplicative IS penalty per infraction kind. Dev/TO/Block carry no
/// penalty coefficient: they terminate the route and cap RC instead.
struct PenaltyTable {
  double ped = 0.50;
  double veh = 0.60;
  double lay = 0.65;
  double red = 0.70;
  double coefficient(InfractionKind k) const;  // ContractError on unknown
};

struct RouteResult {
  double rc = 0.0;  // route completion, percent
  double is = 1.0;  // infraction score in (0, 1]
  double ds = 0.0;  // driving score = rc * is
  std::vector<InfractionEvent> events;
};

/// One recorded tick of a rollout: enough state to rerun every infraction
/// detector offline.
struct TrajectorySample {
  double t = 0.0;
  double ego_x = 0.0, ego_y = 0.0, ego_yaw = 0.0, ego_speed = 0.0;
  double route_s = 0.0, lateral = 0.0;       // ego projection onto the route
  std::vector<ObbBox> agent_boxes;           // live NPC boxes, world frame
};

/// detect_infractions result: the chronological event list truncated at the
/// first terminal event (Dev/TO/Block), plus the truncation bookkeeping.
struct InfractionScan {
  std::vector<InfractionEvent> events;
  double end_time = 0.0;    // terminal time, or the last sample's time
  bool terminated = false;  // a Dev/TO/Block fired
};

/// Replays the detectors over a recorded trajectory. Samples must be in
/// nondecreasing time order (ContractError otherwise). Collisions debounce
/// per contact episode; OR needs a contiguous excursion longer than the
/// grace window; Block needs contiguous near-standstill; TO fires when a
/// sample reaches the budget. Everything after the first terminal event is
/// dropped.
InfractionScan detect_infractions(const std::vector<TrajectorySample>& traj,
                                  const Scenario& scenario,
                                  const InfractionConfig& icfg);

/// rc = 100 * fraction, is = product of per-event penalties (floored at 0),
/// ds = rc * is. Fraction outside [0, 1] or an unknown kind throws
/// ContractError.
RouteResult compute_metrics(const std::vector<InfractionEvent>& events,
                            double completed_fraction,
                            const PenaltyTable& penalties);

// ---------------------------------------------------------------------------
// The world
// ---------------------------------------------------------------------------

/// Ego vehicle kinematic limits (bicycle model).
struct EgoParams {
  double wheelbase = 2.5;     // m
  double max_steer = 0.5;     // rad at |steer| = 1
  double max_accel = 3.0;     // m/s^2 at full throttle
  double brake_decel = 6.0;   // m/s^2 while braking
  double max_speed = 20.0;    // m/s
  double width = 2.0, length = 4.5;
};

/// One buffered world state used for LiDAR history synthesis.
struct WorldSnapshot {
  double t = 0.0;
  EgoPose ego;
  double ego_speed = 0.0;
  std::vector<ObbBox> agent_boxes;  // world frame
};

/// Per-frame ground-truth labels emitted next to the sensors.
struct FrameLabels {
  Tensor waypoints;                              // {4, 2}, ego frame, m
  std::vector<AgentBox> future_agents;           // timesteps 1..3, ego frame
  std::vector<std::array<double, 2>> route_ego;  // route vertices, ego frame
  double lane_half_width = 3.5;
  std::array<double, 2> goal{0.0, 0.0};          // lookahead target, ego frame
  double light_red = 0.0;                        // 1.0 if red light ahead
  double sign_present = 0.0;                     // 1.0 if stop sign ahead
  Weather weather = Weather::sunny;
};

/// Everything the model consumes for one decision, plus the labels.
struct SensorBundle {
  std::vector<PointCloud> clouds;   // oldest -> current, time index -2..0
  std::vector<EgoPose> poses;       // matching world-frame capture poses
  std::vector<uint8_t> camera_rgb;  // 400 x 300 x 3 bytes, row-major RGB
  FrameLabels labels;
};

/// Camera byte buffer -> the raw {3, 300, 400} tensor crop_image expects.
Tensor camera_to_raw_tensor(const std::vector<uint8_t>& rgb);

/// Rasterizes the BEV semantic label map ({r, r}, class ids: 0 background,
/// 1 drivable, 2 lane marking) from the route geometry in the ego frame.
/// The lane-marking band is the outer 0.25 m of the drivable half-width.
Tensor bev_label_map(const std::vector<std::array<double, 2>>& route_ego,
                     double lane_half_width, int64_t r);

/// Goal input fed to the network: the labels' lookahead point scaled by 0.1.
Tensor goal_tensor(const FrameLabels& labels);

/// The closed-loop world: ego bicycle kinematics, car-following NPCs,
/// periodic lights, deterministic synthetic sensors and the scripted expert.
class World {
 public:
  explicit World(Scenario sc);

  /// Advances one tick. dt must be > 0 (ContractError).
  void step(const ControlCommand& cmd, double dt);

  /// Pushes the current state onto the 3-deep sensor history ring.
  void snapshot();
  size_t history_size() const { return history_.size(); }

  /// Synthesizes the sensor bundle from the buffered history. Fewer than 3
  /// snapshots throws ContractError.
  SensorBundle synth_sensors() const;

  // Scripted expert: target speed honoring weather cruise, car-following
  // and red lights; waypoints marched along the route at that speed.
  double expert_target_speed() const;
  Tensor expert_waypoints() const;  // {4, 2}, ego frame

  const Scenario& scenario() const { return scenario_; }
  const RoutePath& route() const { return route_; }
  double time() const { return time_; }
  EgoPose ego_pose() const { return {ego_x_, ego_y_, ego_yaw_}; }
  double ego_speed() const { return ego_speed_; }
  const std::vector<SimAgent>& agents() const { return agents_; }
  ObbBox ego_box() const;
  ObbBox agent_box(const SimAgent& a) const;
  double ego_route_s() const;
  double ego_lateral() const;
  TrajectorySample sample() const;

 private:
  std::vector<LidarPoint> lidar_scan(const WorldSnapshot& snap) const;
  std::vector<uint8_t> render_camera() const;
  FrameLabels make_labels() const;
  /// Rolls a copy of the NPC/ego state forward under the privileged expert
  /// and captures agent boxes at +0.5/+1.0/+1.5 s in the current ego frame.
  std::vector<AgentBox> roll_future_agents() const;
  void step_agents(double dt);

  Scenario scenario_;
  RoutePath route_;
  EgoParams ego_params_;
  double time_ = 0.0;
  double ego_x_ = 0.0, ego_y_ = 0.0, ego_yaw_ = 0.0, ego_speed_ = 0.0;
  std::vector<SimAgent> agents_;
  std::deque<WorldSnapshot> history_;
};

/// Spec-shaped free function: one tick of the world.
inline void step_world(World& w, const ControlCommand& cmd, double dt) {
  w.step(cmd, dt);
}

// ---------------------------------------------------------------------------
// Closed-loop rollout
// ---------------------------------------------------------------------------

/// A driving policy: produces the next held control from the world (expert
/// policies read privileged state; model policies read the sensors).
using DrivePolicy = std::function<ControlCommand(
    const World& world, const SensorBundle& sensors, double dt)>;

struct RouteRunConfig {
  double tick = 0.05;            // s, physics step
  double control_period = 0.5;   // s, policy cadence (command held between)
  double goal_radius = 2.0;      // m to the route end that counts as arrival
  InfractionConfig infractions;  // timeout <= 0 derives from expert time
  PenaltyTable penalties;
};

struct RouteRunResult {
  RouteResult metrics;
  bool reached_goal = false;
  double duration = 0.0;  // s of simulated (possibly truncated) time
  std::vector<TrajectorySample> trajectory;
};

/// Conservative upper estimate of the scripted expert's route time; the
/// default timeout budget is twice this.
double expert_time_estimate(const Scenario& sc);

/// Simulates one episode: warm-up (braked until 3 sensor frames exist),
/// policy every control_period, trajectory recording, offline infraction
/// scan, metrics. Deterministic for a deterministic policy.
RouteRunResult run_route(const Scenario& sc, const DrivePolicy& policy,
                         const RouteRunConfig& cfg = {});

/// Policy wrapping the scripted expert through the waypoint controller.
DrivePolicy make_expert_policy(const ControllerConfig& ccfg = {});

/// Tab-separated route report: header, one line per route (id, seed, rc,
/// is, ds, events), and an aggregate line of column means.
struct RouteReportRow {
  int route_id = 0;
  uint64_t seed = 0;
  RouteResult result;
};
std::string format_route_report(const std::vector<RouteReportRow>& rows);

}  // namespace iidsu
