#include "iidsu/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>

#include "iidsu/nn.hpp"

namespace iidsu {

namespace {

constexpr double kPi = 3.14159265358979323846;

// NPC longitudinal authority (m/s^2) and the hysteresis band (m) that keeps
// the car-following loop from hunting around its desired gap.
constexpr double kNpcBrake = 4.0;
constexpr double kNpcAccel = 2.0;
constexpr double kGapHysteresis = 1.0;

// Scripted-expert following parameters (front bumper to rear bumper).
constexpr double kExpertTimeGap = 1.5;    // s
constexpr double kExpertMinGap = 5.0;     // m
constexpr double kExpertLightStop = 1.0;  // m short of the stop line

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string f4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// world = pose.t + R(pose.yaw) * p  (ego x forward, y rightward).
Vec2 ego_to_world(const EgoPose& pose, double px, double py) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  return {pose.x + c * px - s * py, pose.y + s * px + c * py};
}

// p_ego = R(pose.yaw)^T (p_world - pose.t).
Vec2 world_to_ego(const EgoPose& pose, double wx, double wy) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const double dx = wx - pose.x, dy = wy - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

std::array<Vec2, 4> box_corners(const ObbBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hu = b.l / 2.0, hv = b.w / 2.0;  // u along heading, v across
  std::array<Vec2, 4> out;
  const double us[4] = {hu, hu, -hu, -hu};
  const double vs[4] = {hv, -hv, -hv, hv};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.x + c * us[i] - s * vs[i], b.y + s * us[i] + c * vs[i]};
  }
  return out;
}

bool separated_on_axis(const std::array<Vec2, 4>& a,
                       const std::array<Vec2, 4>& b, double ax, double ay) {
  double amin = std::numeric_limits<double>::infinity(), amax = -amin;
  double bmin = amin, bmax = -amin;
  for (const Vec2& p : a) {
    const double t = p.x * ax + p.y * ay;
    amin = std::min(amin, t);
    amax = std::max(amax, t);
  }
  for (const Vec2& p : b) {
    const double t = p.x * ax + p.y * ay;
    bmin = std::min(bmin, t);
    bmax = std::max(bmax, t);
  }
  return amax < bmin || bmax < amin;
}

// Scripted-expert target speed given the live world state: weather cruise
// capped by car-following against vehicles/pedestrians ahead on the route
// and by upcoming red lights.
double expert_speed(const Scenario& sc, const RoutePath& route,
                    const std::vector<SimAgent>& agents, double ego_s,
                    double t) {
  double v = expert_cruise(sc.weather);
  const double ego_front = ego_s + EgoParams{}.length / 2.0;
  for (const SimAgent& a : agents) {
    if (a.route_s <= ego_s) continue;
    const double gap = (a.route_s - a.l / 2.0) - ego_front;
    if (gap < 40.0) {
      v = std::min(v, std::max(0.0, (gap - kExpertMinGap) / kExpertTimeGap));
    }
  }
  for (const Pedestrian& p : sc.pedestrians) {
    double ps = 0.0, plat = 0.0;
    route.project(p.x, p.y, &ps, &plat);
    if (std::fabs(plat) > sc.lane_half_width + 0.5 || ps <= ego_s) continue;
    const double gap = ps - ego_front - 0.3;
    if (gap < 40.0) {
      v = std::min(v, std::max(0.0, (gap - kExpertMinGap) / kExpertTimeGap));
    }
  }
  for (const TrafficLight& l : sc.lights) {
    const double gap = (l.route_s - kExpertLightStop) - ego_front;
    if (gap < -1.0 || gap > 30.0) continue;
    const double tta = std::max(gap, 0.0) / std::max(v, 0.5);
    if (l.red_within(t, tta + 1.0)) {
      v = std::min(v, std::max(0.0, gap / 2.0));
    }
  }
  return v;
}

// One car-following tick for every NPC, order-independent (all gaps are
// computed against the pre-tick state). The ego participates as a leader
// when it is on the route corridor. Red lights act as stationary leaders.
void npc_tick(const Scenario& sc, const RoutePath& route,
              std::vector<SimAgent>& agents, double ego_s, double ego_lateral,
              double t, double dt) {
  const bool ego_on_route =
      std::fabs(ego_lateral) <= sc.lane_half_width + 1.0;
  const double ego_rear = ego_s - EgoParams{}.length / 2.0;
  (void)route;
  std::vector<SimAgent> next = agents;
  for (size_t i = 0; i < agents.size(); ++i) {
    const SimAgent& a = agents[i];
    const double front = a.route_s + a.l / 2.0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < agents.size(); ++j) {
      if (j == i || agents[j].route_s <= a.route_s) continue;
      best_gap =
          std::min(best_gap, (agents[j].route_s - agents[j].l / 2.0) - front);
    }
    if (ego_on_route && ego_s > a.route_s) {
      best_gap = std::min(best_gap, ego_rear - front);
    }
    for (const TrafficLight& l : sc.lights) {
      if (l.route_s > front && l.red_at(t)) {
        best_gap = std::min(best_gap, l.route_s - front);
      }
    }
    const BehaviorParams p = behavior_params(a.behavior);
    const double desired = p.min_distance + p.time_gap * a.speed;
    double v = a.speed;
    if (best_gap <= desired) {
      v = std::max(0.0, v - kNpcBrake * dt);
    } else if (v < p.speed_limit && best_gap > desired + kGapHysteresis) {
      v = std::min(p.speed_limit, v + kNpcAccel * dt);
    }
    next[i].speed = v;
    next[i].route_s = a.route_s + v * dt;
  }
  agents = std::move(next);
}

struct WeatherPalette {
  uint8_t sky[3];
  uint8_t ground[3];
};

WeatherPalette weather_palette(Weather w) {
  switch (w) {
    case Weather::sunny:
      return {{120, 190, 240}, {120, 110, 90}};
    case Weather::cloudy:
      return {{160, 160, 165}, {105, 100, 95}};
    case Weather::rainy:
      return {{80, 85, 110}, {60, 65, 85}};
    case Weather::foggy:
      return {{205, 205, 205}, {150, 150, 150}};
  }
  throw ContractError("weather_palette: invalid weather tag");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tables and small types
// ---------------------------------------------------------------------------

const char* weather_name(Weather w) {
  switch (w) {
    case Weather::sunny:
      return "sunny";
    case Weather::cloudy:
      return "cloudy";
    case Weather::rainy:
      return "rainy";
    case Weather::foggy:
      return "foggy";
  }
  throw ContractError("weather_name: invalid weather tag");
}

Weather weather_from_name(const std::string& name) {
  for (int i = 0; i < kWeatherClasses; ++i) {
    const Weather w = static_cast<Weather>(i);
    if (name == weather_name(w)) return w;
  }
  throw ContractError("weather_from_name: unknown tag '" + name + "'");
}

const char* behavior_name(BehaviorClass c) {
  switch (c) {
    case BehaviorClass::normal:
      return "normal";
    case BehaviorClass::aggressive:
      return "aggressive";
    case BehaviorClass::cautious:
      return "cautious";
  }
  throw ContractError("behavior_name: invalid behavior class");
}

BehaviorClass behavior_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i) {
    const BehaviorClass c = static_cast<BehaviorClass>(i);
    if (name == behavior_name(c)) return c;
  }
  throw ContractError("behavior_from_name: unknown class '" + name + "'");
}

BehaviorParams behavior_params(BehaviorClass c) {
  switch (c) {
    case BehaviorClass::normal:
      return {6.0, 1.5, 4.0};
    case BehaviorClass::aggressive:
      return {8.0, 1.0, 2.0};
    case BehaviorClass::cautious:
      return {4.0, 2.5, 6.0};
  }
  throw ContractError("behavior_params: invalid behavior class");
}

double expert_cruise(Weather w) {
  switch (w) {
    case Weather::sunny:
      return 6.0;
    case Weather::cloudy:
      return 5.5;
    case Weather::rainy:
      return 4.5;
    case Weather::foggy:
      return 4.0;
  }
  throw ContractError("expert_cruise: invalid weather tag");
}

bool boxes_overlap(const ObbBox& a, const ObbBox& b) {
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  const double axes[4][2] = {
      {std::cos(a.yaw), std::sin(a.yaw)},
      {-std::sin(a.yaw), std::cos(a.yaw)},
      {std::cos(b.yaw), std::sin(b.yaw)},
      {-std::sin(b.yaw), std::cos(b.yaw)},
  };
  for (const auto& ax : axes) {
    if (separated_on_axis(ca, cb, ax[0], ax[1])) return false;
  }
  return true;
}

bool TrafficLight::red_at(double t) const {
  const double cycle = green_time + red_time;
  double pos = std::fmod(t + phase, cycle);
  if (pos < 0.0) pos += cycle;
  return pos >= green_time;
}

bool TrafficLight::red_within(double t, double horizon) const {
  if (red_at(t)) return true;
  const double cycle = green_time + red_time;
  double pos = std::fmod(t + phase, cycle);
  if (pos < 0.0) pos += cycle;
  return horizon >= green_time - pos;  // time left in the green phase
}

void Scenario::validate() const {
  if (route.size() < 2) {
    throw ContractError("Scenario: route needs at least 2 points");
  }
  for (const auto& p : route) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw ContractError("Scenario: non-finite route point");
    }
  }
  if (!(lane_half_width > 0.0) || !std::isfinite(lane_half_width)) {
    throw ContractError("Scenario: lane_half_width must be positive");
  }
  if (static_cast<int>(weather) >= kWeatherClasses) {
    throw ContractError("Scenario: invalid weather tag");
  }
  for (const SimAgent& a : agents) {
    if (a.speed < 0.0 || !(a.w > 0.0) || !(a.l > 0.0)) {
      throw ContractError("Scenario: agent speed must be >= 0, sizes > 0");
    }
  }
  for (const TrafficLight& l : lights) {
    if (!(l.green_time > 0.0) || !(l.red_time > 0.0)) {
      throw ContractError("Scenario: light phases must be positive");
    }
  }
  if (difficulty < 0) throw ContractError("Scenario: difficulty must be >= 0");
}

std::string Scenario::serialize() const {
  std::ostringstream out;
  out << "scenario-v1\n";
  out << "seed " << seed << "\n";
  out << "difficulty " << difficulty << "\n";
  out << "weather " << weather_name(weather) << "\n";
  out << "lane_half_width " << g17(lane_half_width) << "\n";
  out << "route " << route.size() << "\n";
  for (const auto& p : route) out << "pt " << g17(p[0]) << " " << g17(p[1]) << "\n";
  out << "layout " << layout.size() << "\n";
  for (const ObbBox& b : layout) {
    out << "box " << g17(b.x) << " " << g17(b.y) << " " << g17(b.yaw) << " "
        << g17(b.w) << " " << g17(b.l) << "\n";
  }
  out << "agents " << agents.size() << "\n";
  for (const SimAgent& a : agents) {
    out << "agent " << g17(a.route_s) << " " << g17(a.speed) << " "
        << g17(a.w) << " " << g17(a.l) << " " << behavior_name(a.behavior)
        << "\n";
  }
  out << "pedestrians " << pedestrians.size() << "\n";
  for (const Pedestrian& p : pedestrians) {
    out << "ped " << g17(p.x) << " " << g17(p.y) << " " << g17(p.yaw) << " "
        << g17(p.w) << " " << g17(p.l) << "\n";
  }
  out << "lights " << lights.size() << "\n";
  for (const TrafficLight& l : lights) {
    out << "light " << g17(l.route_s) << " " << g17(l.green_time) << " "
        << g17(l.red_time) << " " << g17(l.phase) << " " << g17(l.x) << " "
        << g17(l.y) << "\n";
  }
  out << "signs " << signs.size() << "\n";
  for (const StopSign& s : signs) {
    out << "sign " << g17(s.route_s) << " " << g17(s.x) << " " << g17(s.y)
        << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

Scenario generate_scenario(uint64_t seed, int difficulty) {
  if (difficulty < 0) {
    throw ContractError("generate_scenario: difficulty must be >= 0");
  }
  Rng rng(seed);
  Scenario sc;
  sc.seed = seed;
  sc.difficulty = difficulty;
  sc.weather = static_cast<Weather>(rng.uniform_int(kWeatherClasses));

  // Route polyline: difficulty 0 is the canonical empty 100 m straight;
  // otherwise chained segments with gentle heading changes.
  if (difficulty == 0) {
    sc.route = {{0.0, 0.0}, {100.0, 0.0}};
  } else {
    const int segments = 1 + std::min(difficulty, 4);
    double x = 0.0, y = 0.0, heading = 0.0;
    sc.route.push_back({x, y});
    for (int i = 0; i < segments; ++i) {
      if (i > 0) heading += rng.uniform(-0.35, 0.35);
      const double len = rng.uniform(40.0, 60.0);
      x += len * std::cos(heading);
      y += len * std::sin(heading);
      sc.route.push_back({x, y});
    }
  }
  const RoutePath path(sc.route);
  const double route_len = path.length();

  auto roadside_point = [&](double s, double lateral) {
    const RouteFrame f = path.at(s);
    return ego_to_world({f.x, f.y, f.yaw}, 0.0, lateral);
  };

  if (difficulty >= 1) {
    // NPC vehicles spaced ahead of the start, behavior per the weather rule.
    const bool cautious_weather =
        sc.weather == Weather::rainy || sc.weather == Weather::foggy;
    const int n_agents = std::min(difficulty, 6);
    for (int i = 0; i < n_agents; ++i) {
      SimAgent a;
      a.route_s = 20.0 * (i + 1) + rng.uniform(0.0, 10.0);
      a.behavior = cautious_weather
                       ? BehaviorClass::cautious
                       : (rng.uniform_int(2) == 0 ? BehaviorClass::normal
                                                  : BehaviorClass::aggressive);
      a.speed = 0.5 * behavior_params(a.behavior).speed_limit;
      sc.agents.push_back(a);
    }
    // Roadside layout boxes (buildings) on alternating sides.
    const int n_boxes = 2 * difficulty;
    for (int i = 0; i < n_boxes; ++i) {
      const double s = rng.uniform(0.1, 0.9) * route_len;
      const double side = (i % 2 == 0) ? 1.0 : -1.0;
      const double lateral =
          side * (sc.lane_half_width + 3.0 + rng.uniform(0.0, 3.0));
      const RouteFrame f = path.at(s);
      const Vec2 p = roadside_point(s, lateral);
      sc.layout.push_back({p.x, p.y, f.yaw, 6.0, 10.0});
    }
  }
  if (difficulty >= 2) {
    const int n_peds = std::min(difficulty - 1, 4);
    for (int i = 0; i < n_peds; ++i) {
      const double s = rng.uniform(0.2, 0.8) * route_len;
      const double side = rng.uniform_int(2) == 0 ? 1.0 : -1.0;
      const double lateral =
          side * (sc.lane_half_width + 0.5 + rng.uniform(0.0, 1.5));
      const Vec2 p = roadside_point(s, lateral);
      sc.pedestrians.push_back({p.x, p.y, rng.uniform(-kPi, kPi), 0.6, 0.6});
    }
    TrafficLight l;
    l.route_s = route_len * rng.uniform(0.4, 0.6);
    l.phase = rng.uniform(0.0, 10.0);
    const Vec2 p = roadside_point(l.route_s, sc.lane_half_width + 1.0);
    l.x = p.x;
    l.y = p.y;
    sc.lights.push_back(l);
  }
  if (difficulty >= 3) {
    StopSign s;
    s.route_s = route_len * rng.uniform(0.7, 0.8);
    const Vec2 p = roadside_point(s.route_s, sc.lane_half_width + 1.0);
    s.x = p.x;
    s.y = p.y;
    sc.signs.push_back(s);
  }
  sc.validate();
  return sc;
}

Scenario matched_lead_scenario(Weather w) {
  Scenario sc;
  sc.route = {{0.0, 0.0}, {120.0, 0.0}};
  sc.weather = w;
  sc.difficulty = 1;
  SimAgent lead;
  lead.route_s = 25.0;
  lead.speed = 4.0;
  lead.behavior = BehaviorClass::normal;  // pinned: the pair differs only in weather
  sc.agents.push_back(lead);
  sc.validate();
  return sc;
}

// ---------------------------------------------------------------------------
// Route geometry
// ---------------------------------------------------------------------------

RoutePath::RoutePath(const std::vector<std::array<double, 2>>& pts) {
  for (const auto& p : pts) {
    if (!pts_.empty() && p[0] == pts_.back()[0] && p[1] == pts_.back()[1]) {
      continue;  // drop zero-length segments
    }
    pts_.push_back(p);
  }
  if (pts_.size() < 2) {
    throw ContractError("RoutePath: need at least 2 distinct points");
  }
  cum_.resize(pts_.size());
  cum_[0] = 0.0;
  for (size_t i = 1; i < pts_.size(); ++i) {
    cum_[i] = cum_[i - 1] + std::hypot(pts_[i][0] - pts_[i - 1][0],
                                       pts_[i][1] - pts_[i - 1][1]);
  }
}

RouteFrame RoutePath::at(double s) const {
  size_t i = 0;  // segment index
  if (s >= cum_.back()) {
    i = pts_.size() - 2;
  } else if (s > 0.0) {
    while (i + 2 < pts_.size() && cum_[i + 1] <= s) ++i;
  }
  const double dx = pts_[i + 1][0] - pts_[i][0];
  const double dy = pts_[i + 1][1] - pts_[i][1];
  const double len = cum_[i + 1] - cum_[i];
  const double t = (s - cum_[i]) / len;  // may extrapolate outside [0,1]
  return {pts_[i][0] + t * dx, pts_[i][1] + t * dy, std::atan2(dy, dx)};
}

void RoutePath::project(double x, double y, double* s, double* lateral) const {
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_s = 0.0, best_lat = 0.0;
  for (size_t i = 0; i + 1 < pts_.size(); ++i) {
    const double ax = pts_[i][0], ay = pts_[i][1];
    const double dx = pts_[i + 1][0] - ax, dy = pts_[i + 1][1] - ay;
    const double len = cum_[i + 1] - cum_[i];
    double t = ((x - ax) * dx + (y - ay) * dy) / (len * len);
    t = std::clamp(t, 0.0, 1.0);
    const double cx = ax + t * dx, cy = ay + t * dy;
    const double rx = x - cx, ry = y - cy;
    const double d2 = rx * rx + ry * ry;
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = cum_[i] + t * len;
      // right of heading = (-dy, dx)/len in this y-rightward convention
      const double dot = (-dy * rx + dx * ry) / len;
      best_lat = std::copysign(std::sqrt(d2), dot);
    }
  }
  if (s != nullptr) *s = best_s;
  if (lateral != nullptr) *lateral = best_lat;
}

// ---------------------------------------------------------------------------
// Infractions and metrics
// ---------------------------------------------------------------------------

const char* infraction_name(InfractionKind k) {
  switch (k) {
    case InfractionKind::Ped:
      return "Ped";
    case InfractionKind::Veh:
      return "Veh";
    case InfractionKind::Lay:
      return "Lay";
    case InfractionKind::Red:
      return "Red";
    case InfractionKind::OR:
      return "OR";
    case InfractionKind::Dev:
      return "Dev";
    case InfractionKind::TO:
      return "TO";
    case InfractionKind::Block:
      return "Block";
  }
  throw ContractError("infraction_name: unknown kind");
}

double PenaltyTable::coefficient(InfractionKind k) const {
  switch (k) {
    case InfractionKind::Ped:
      return ped;
    case InfractionKind::Veh:
      return veh;
    case InfractionKind::Lay:
      return lay;
    case InfractionKind::Red:
      return red;
    case InfractionKind::OR:
      return 1.0;  // recorded only; off-road time already costs RC progress
    case InfractionKind::Dev:
    case InfractionKind::TO:
    case InfractionKind::Block:
      return 1.0;  // terminal kinds cap RC instead of scaling IS
  }
  throw ContractError("PenaltyTable: unknown infraction kind");
}

InfractionScan detect_infractions(const std::vector<TrajectorySample>& traj,
                                  const Scenario& scenario,
                                  const InfractionConfig& icfg) {
  InfractionScan scan;
  if (traj.empty()) return scan;
  for (size_t i = 1; i < traj.size(); ++i) {
    if (traj[i].t < traj[i - 1].t) {
      throw ContractError("detect_infractions: samples out of time order");
    }
  }

  std::vector<ObbBox> ped_boxes, layout_boxes;
  for (const Pedestrian& p : scenario.pedestrians) {
    ped_boxes.push_back({p.x, p.y, p.yaw, p.w, p.l});
  }
  layout_boxes = scenario.layout;

  const EgoParams ep;
  std::vector<char> veh_contact, ped_contact(ped_boxes.size(), 0),
      lay_contact(layout_boxes.size(), 0);
  double offroad_start = -1.0;
  bool offroad_fired = false;
  double block_start = -1.0;
  double prev_s = traj.front().route_s;
  const double budget = icfg.timeout_budget;

  for (const TrajectorySample& smp : traj) {
    const ObbBox ego{smp.ego_x, smp.ego_y, smp.ego_yaw, ep.width, ep.length};
    bool terminal = false;

    // Collisions, debounced per contact episode per object.
    if (veh_contact.size() < smp.agent_boxes.size()) {
      veh_contact.resize(smp.agent_boxes.size(), 0);
    }
    for (size_t i = 0; i < smp.agent_boxes.size(); ++i) {
      const bool hit = boxes_overlap(ego, smp.agent_boxes[i]);
      if (hit && !veh_contact[i]) {
        scan.events.push_back(
            {InfractionKind::Veh, smp.t, smp.ego_x, smp.ego_y});
      }
      veh_contact[i] = hit ? 1 : 0;
    }
    for (size_t i = 0; i < ped_boxes.size(); ++i) {
      const bool hit = boxes_overlap(ego, ped_boxes[i]);
      if (hit && !ped_contact[i]) {
        scan.events.push_back(
            {InfractionKind::Ped, smp.t, smp.ego_x, smp.ego_y});
      }
      ped_contact[i] = hit ? 1 : 0;
    }
    for (size_t i = 0; i < layout_boxes.size(); ++i) {
      const bool hit = boxes_overlap(ego, layout_boxes[i]);
      if (hit && !lay_contact[i]) {
        scan.events.push_back(
            {InfractionKind::Lay, smp.t, smp.ego_x, smp.ego_y});
      }
      lay_contact[i] = hit ? 1 : 0;
    }

    // Red light: stop-line crossing while the light shows red.
    for (const TrafficLight& l : scenario.lights) {
      if (prev_s < l.route_s && smp.route_s >= l.route_s && l.red_at(smp.t)) {
        scan.events.push_back(
            {InfractionKind::Red, smp.t, smp.ego_x, smp.ego_y});
      }
    }

    // Off-road: contiguous time outside the drivable band.
    if (std::fabs(smp.lateral) > scenario.lane_half_width) {
      if (offroad_start < 0.0) {
        offroad_start = smp.t;
        offroad_fired = false;
      }
      if (!offroad_fired && smp.t - offroad_start > icfg.offroad_window) {
        scan.events.push_back(
            {InfractionKind::OR, smp.t, smp.ego_x, smp.ego_y});
        offroad_fired = true;
      }
    } else {
      offroad_start = -1.0;
      offroad_fired = false;
    }

    // Terminal detectors, in a fixed precedence order at equal times.
    if (std::fabs(smp.lateral) > icfg.dev_threshold) {
      scan.events.push_back({InfractionKind::Dev, smp.t, smp.ego_x, smp.ego_y});
      terminal = true;
    }
    if (!terminal && smp.ego_speed < icfg.block_speed) {
      if (block_start < 0.0) block_start = smp.t;
      if (smp.t - block_start > icfg.block_window) {
        scan.events.push_back(
            {InfractionKind::Block, smp.t, smp.ego_x, smp.ego_y});
        terminal = true;
      }
    } else if (!terminal) {
      block_start = -1.0;
    }
    if (!terminal && budget > 0.0 && smp.t >= budget) {
      scan.events.push_back({InfractionKind::TO, smp.t, smp.ego_x, smp.ego_y});
      terminal = true;
    }

    prev_s = smp.route_s;
    scan.end_time = smp.t;
    if (terminal) {
      scan.terminated = true;
      break;
    }
  }
  return scan;
}

RouteResult compute_metrics(const std::vector<InfractionEvent>& events,
                            double completed_fraction,
                            const PenaltyTable& penalties) {
  if (!std::isfinite(completed_fraction) || completed_fraction < 0.0 ||
      completed_fraction > 1.0) {
    throw ContractError("compute_metrics: completed_fraction outside [0, 1]");
  }
  RouteResult r;
  r.events = events;
  r.rc = 100.0 * completed_fraction;
  r.is = 1.0;
  for (const InfractionEvent& e : events) {
    r.is *= penalties.coefficient(e.kind);
  }
  r.is = std::clamp(r.is, 0.0, 1.0);
  r.ds = r.rc * r.is;
  return r;
}

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

World::World(Scenario sc) : scenario_(std::move(sc)) {
  scenario_.validate();
  route_ = RoutePath(scenario_.route);
  const RouteFrame start = route_.at(0.0);
  ego_x_ = start.x;
  ego_y_ = start.y;
  ego_yaw_ = start.yaw;
  agents_ = scenario_.agents;
}

void World::step(const ControlCommand& cmd, double dt) {
  if (!(dt > 0.0)) throw ContractError("World::step: dt must be > 0");
  double v = ego_speed_;
  if (cmd.brake) {
    v = std::max(0.0, v - ego_params_.brake_decel * dt);
  } else {
    const double throttle = std::clamp(cmd.throttle, 0.0, 1.0);
    v = std::min(ego_params_.max_speed, v + throttle * ego_params_.max_accel * dt);
  }
  const double steer = std::clamp(cmd.steer, -1.0, 1.0);
  const double delta = steer * ego_params_.max_steer;
  ego_yaw_ = normalize_yaw(ego_yaw_ +
                           (v / ego_params_.wheelbase) * std::tan(delta) * dt);
  ego_x_ += v * std::cos(ego_yaw_) * dt;
  ego_y_ += v * std::sin(ego_yaw_) * dt;
  ego_speed_ = v;
  step_agents(dt);
  time_ += dt;
}

void World::step_agents(double dt) {
  double es = 0.0, elat = 0.0;
  route_.project(ego_x_, ego_y_, &es, &elat);
  npc_tick(scenario_, route_, agents_, es, elat, time_, dt);
}

ObbBox World::ego_box() const {
  return {ego_x_, ego_y_, ego_yaw_, ego_params_.width, ego_params_.length};
}

ObbBox World::agent_box(const SimAgent& a) const {
  const RouteFrame f = route_.at(a.route_s);
  return {f.x, f.y, f.yaw, a.w, a.l};
}

double World::ego_route_s() const {
  double s = 0.0;
  route_.project(ego_x_, ego_y_, &s, nullptr);
  return s;
}

double World::ego_lateral() const {
  double lat = 0.0;
  route_.project(ego_x_, ego_y_, nullptr, &lat);
  return lat;
}

TrajectorySample World::sample() const {
  TrajectorySample smp;
  smp.t = time_;
  smp.ego_x = ego_x_;
  smp.ego_y = ego_y_;
  smp.ego_yaw = ego_yaw_;
  smp.ego_speed = ego_speed_;
  route_.project(ego_x_, ego_y_, &smp.route_s, &smp.lateral);
  smp.agent_boxes.reserve(agents_.size());
  for (const SimAgent& a : agents_) smp.agent_boxes.push_back(agent_box(a));
  return smp;
}

void World::snapshot() {
  WorldSnapshot snap;
  snap.t = time_;
  snap.ego = ego_pose();
  snap.ego_speed = ego_speed_;
  snap.agent_boxes.reserve(agents_.size());
  for (const SimAgent& a : agents_) snap.agent_boxes.push_back(agent_box(a));
  history_.push_back(std::move(snap));
  while (history_.size() > 3) history_.pop_front();
}

double World::expert_target_speed() const {
  return expert_speed(scenario_, route_, agents_, ego_route_s(), time_);
}

Tensor World::expert_waypoints() const {
  const double v = expert_target_speed();
  const double es = ego_route_s();
  const EgoPose pose = ego_pose();
  std::vector<double> vals(8);
  for (int i = 1; i <= 4; ++i) {
    const RouteFrame f = route_.at(es + v * 0.5 * i);
    const Vec2 p = world_to_ego(pose, f.x, f.y);
    vals[(i - 1) * 2 + 0] = p.x;
    vals[(i - 1) * 2 + 1] = p.y;
  }
  return Tensor::from_values({4, 2}, std::move(vals), Precision::f64);
}

std::vector<LidarPoint> World::lidar_scan(const WorldSnapshot& snap) const {
  std::vector<LidarPoint> pts;
  pts.reserve(4096 + 512);
  // Ground-plane grid sampled in the sweep's own ego frame (0.5 m pitch
  // over the BEV extent), z = 0: at/below z_ground, so channel 0.
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      pts.push_back({0.25 + 0.5 * i, -15.75 + 0.5 * j, 0.0});
    }
  }
  const double zs[3] = {0.5, 1.0, 1.5};
  auto add_box = [&](const ObbBox& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hu = b.l / 2.0, hv = b.w / 2.0;
    auto add_wall = [&](double u0, double v0, double u1, double v1) {
      const double len = std::hypot(u1 - u0, v1 - v0);
      const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.3)));
      for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        const double u = u0 + t * (u1 - u0), v = v0 + t * (v1 - v0);
        const double wx = b.x + c * u - s * v, wy = b.y + s * u + c * v;
        const Vec2 e = world_to_ego(snap.ego, wx, wy);
        if (std::fabs(e.x) > 48.0 || std::fabs(e.y) > 48.0) continue;
        for (double z : zs) pts.push_back({e.x, e.y, z});
      }
    };
    add_wall(-hu, -hv, hu, -hv);
    add_wall(-hu, hv, hu, hv);
    add_wall(-hu, -hv, -hu, hv);
    add_wall(hu, -hv, hu, hv);
  };
  for (const ObbBox& b : snap.agent_boxes) add_box(b);
  for (const Pedestrian& p : scenario_.pedestrians) {
    add_box({p.x, p.y, p.yaw, p.w, p.l});
  }
  for (const ObbBox& b : scenario_.layout) add_box(b);
  return pts;
}

std::vector<uint8_t> World::render_camera() const {
  constexpr int W = 400, H = 300;
  constexpr double f = 300.0, cy = 130.0, cam_h = 1.6;
  const WeatherPalette pal = weather_palette(scenario_.weather);
  std::vector<uint8_t> img(W * H * 3, 0);
  auto put = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    const size_t o = 3 * (static_cast<size_t>(y) * W + x);
    img[o] = r;
    img[o + 1] = g;
    img[o + 2] = b;
  };
  for (int y = 0; y < H; ++y) {
    const uint8_t* c = y < cy ? pal.sky : pal.ground;
    for (int x = 0; x < W; ++x) put(x, y, c[0], c[1], c[2]);
  }

  // Road band: march the route ahead of the ego and fill scanlines.
  const EgoPose pose = ego_pose();
  const double es = ego_route_s();
  const double hw = scenario_.lane_half_width;
  for (double ds = 0.0; ds <= 70.0; ds += 0.05) {
    const RouteFrame rf = route_.at(es + ds);
    const Vec2 p = world_to_ego(pose, rf.x, rf.y);
    if (p.x < 0.8) continue;
    const int v = static_cast<int>(std::llround(cy + f * cam_h / p.x));
    if (v <= cy || v >= H) continue;
    const double uc = 200.0 + f * p.y / p.x;
    const double half_px = f * hw / p.x;
    const int u0 = static_cast<int>(std::llround(uc - half_px));
    const int u1 = static_cast<int>(std::llround(uc + half_px));
    for (int u = u0; u <= u1; ++u) {
      const bool edge = u - u0 < 2 || u1 - u < 2;
      if (edge) {
        put(u, v, 228, 228, 228);
      } else {
        put(u, v, 55, 55, 58);
      }
    }
  }

  // Agents and pedestrians, far to near.
  struct Sprite {
    double x, y, w, h;  // ego-frame pos, world width, apparent height
    uint8_t r, g, b;
  };
  std::vector<Sprite> sprites;
  for (const SimAgent& a : agents_) {
    const ObbBox b = agent_box(a);
    const Vec2 p = world_to_ego(pose, b.x, b.y);
    sprites.push_back({p.x, p.y, 0.5 * (b.w + b.l), 1.5, 223, 218, 8});
  }
  for (const Pedestrian& pd : scenario_.pedestrians) {
    const Vec2 p = world_to_ego(pose, pd.x, pd.y);
    sprites.push_back({p.x, p.y, pd.w, 1.8, 255, 140, 40});
  }
  std::stable_sort(sprites.begin(), sprites.end(),
                   [](const Sprite& a, const Sprite& b) { return a.x > b.x; });
  for (const Sprite& sp : sprites) {
    if (sp.x < 1.2 || sp.x > 80.0) continue;
    const double u = 200.0 + f * sp.y / sp.x;
    const double vb = cy + f * cam_h / sp.x;
    const double hpx = f * sp.h / sp.x;
    const double wpx = f * sp.w / sp.x;
    const int x0 = static_cast<int>(std::llround(u - wpx / 2.0));
    const int x1 = static_cast<int>(std::llround(u + wpx / 2.0));
    const int y0 = static_cast<int>(std::llround(vb - hpx));
    const int y1 = static_cast<int>(std::llround(vb));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) put(x, y, sp.r, sp.g, sp.b);
    }
  }

  // Nearest upcoming traffic light as a colored lamp on its pole.
  const TrafficLight* next_light = nullptr;
  for (const TrafficLight& l : scenario_.lights) {
    if (l.route_s > es - 0.5 && l.route_s - es < 45.0 &&
        (next_light == nullptr || l.route_s < next_light->route_s)) {
      next_light = &l;
    }
  }
  if (next_light != nullptr) {
    const Vec2 p = world_to_ego(pose, next_light->x, next_light->y);
    if (p.x > 0.5) {
      const double u = 200.0 + f * p.y / p.x;
      const double vtop = cy - f * (3.0 - cam_h) / p.x;
      const int size =
          static_cast<int>(std::clamp(f * 0.4 / p.x, 2.0, 12.0));
      const bool red = next_light->red_at(time_);
      for (int dy = 0; dy <= size; ++dy) {
        for (int dx = 0; dx <= size; ++dx) {
          put(static_cast<int>(std::llround(u)) + dx - size / 2,
              static_cast<int>(std::llround(vtop)) + dy,
              red ? 255 : 0, red ? 0 : 255, 0);
        }
      }
    }
  }
  return img;
}

std::vector<AgentBox> World::roll_future_agents() const {
  const EgoPose ref = ego_pose();
  std::vector<SimAgent> agents = agents_;
  double es = ego_route_s();
  double elat = ego_lateral();
  double ev = ego_speed_;
  double t = time_;
  const double dt = 0.05;
  std::vector<AgentBox> out;
  auto capture = [&](int timestep) {
    for (const SimAgent& a : agents) {
      const RouteFrame f = route_.at(a.route_s);
      const Vec2 p = world_to_ego(ref, f.x, f.y);
      out.push_back({p.x, p.y, a.w, a.l, normalize_yaw(f.yaw - ref.yaw),
                     timestep, AgentKind::vehicle});
    }
    for (const Pedestrian& pd : scenario_.pedestrians) {
      const Vec2 p = world_to_ego(ref, pd.x, pd.y);
      out.push_back({p.x, p.y, pd.w, pd.l, normalize_yaw(pd.yaw - ref.yaw),
                     timestep, AgentKind::pedestrian});
    }
  };
  for (int k = 1; k <= 30; ++k) {
    // Privileged expert ego: march along the centerline at the scripted
    // target speed so the NPC reactions stay realistic.
    const double vt = expert_speed(scenario_, route_, agents, es, t);
    if (ev < vt) {
      ev = std::min(vt, ev + ego_params_.max_accel * dt);
    } else {
      ev = std::max(vt, ev - ego_params_.brake_decel * dt);
    }
    es += ev * dt;
    npc_tick(scenario_, route_, agents, es, elat, t, dt);
    t += dt;
    if (k % 10 == 0) capture(k / 10);
  }
  return out;
}

FrameLabels World::make_labels() const {
  FrameLabels lab;
  lab.waypoints = expert_waypoints();
  lab.future_agents = roll_future_agents();
  const EgoPose pose = ego_pose();
  for (const auto& p : scenario_.route) {
    const Vec2 e = world_to_ego(pose, p[0], p[1]);
    lab.route_ego.push_back({e.x, e.y});
  }
  lab.lane_half_width = scenario_.lane_half_width;
  const double es = ego_route_s();
  const double goal_s = std::min(es + 30.0, route_.length());
  const RouteFrame gf = route_.at(goal_s);
  const Vec2 ge = world_to_ego(pose, gf.x, gf.y);
  lab.goal = {ge.x, ge.y};
  for (const TrafficLight& l : scenario_.lights) {
    if (l.route_s > es && l.route_s - es <= 30.0 && l.red_at(time_)) {
      lab.light_red = 1.0;
    }
  }
  for (const StopSign& s : scenario_.signs) {
    if (s.route_s > es && s.route_s - es <= 30.0) lab.sign_present = 1.0;
  }
  lab.weather = scenario_.weather;
  return lab;
}

SensorBundle World::synth_sensors() const {
  if (history_.size() < 3) {
    throw ContractError(
        "World::synth_sensors: needs 3 buffered snapshots, have " +
        std::to_string(history_.size()));
  }
  SensorBundle out;
  const int n = static_cast<int>(history_.size());
  for (int i = 0; i < n; ++i) {
    PointCloud pc;
    pc.points = lidar_scan(history_[i]);
    pc.frame_time_index = i - (n - 1);
    out.clouds.push_back(std::move(pc));
    out.poses.push_back(history_[i].ego);
  }
  out.camera_rgb = render_camera();
  out.labels = make_labels();
  return out;
}

// ---------------------------------------------------------------------------
// Bundle helpers
// ---------------------------------------------------------------------------

Tensor camera_to_raw_tensor(const std::vector<uint8_t>& rgb) {
  constexpr int64_t W = 400, H = 300;
  if (rgb.size() != static_cast<size_t>(W * H * 3)) {
    throw ContractError("camera_to_raw_tensor: expected 400x300x3 bytes");
  }
  std::vector<double> vals(3 * H * W);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        vals[(c * H + y) * W + x] = rgb[3 * (y * W + x) + c];
      }
    }
  }
  return Tensor::from_values({3, H, W}, std::move(vals), Precision::f64);
}

Tensor bev_label_map(const std::vector<std::array<double, 2>>& route_ego,
                     double lane_half_width, int64_t r) {
  if (route_ego.size() < 2) {
    throw ContractError("bev_label_map: route needs at least 2 points");
  }
  if (!(lane_half_width > 0.0)) {
    throw ContractError("bev_label_map: lane_half_width must be positive");
  }
  SensorConfig cfg;
  cfg.r = r;
  cfg.validate();
  const double s = cfg.px_per_m();
  const double lane_inner = std::max(lane_half_width - 0.25, 0.0);
  std::vector<double> vals(r * r, 0.0);
  for (int64_t row = 0; row < r; ++row) {
    const double x = (static_cast<double>(r - 1 - row) + 0.5) / s;
    for (int64_t col = 0; col < r; ++col) {
      const double y = (static_cast<double>(col) + 0.5) / s - 16.0;
      double best = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i + 1 < route_ego.size(); ++i) {
        const double ax = route_ego[i][0], ay = route_ego[i][1];
        const double dx = route_ego[i + 1][0] - ax;
        const double dy = route_ego[i + 1][1] - ay;
        const double len2 = dx * dx + dy * dy;
        if (len2 == 0.0) continue;
        double t = ((x - ax) * dx + (y - ay) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
        const double rx = x - (ax + t * dx), ry = y - (ay + t * dy);
        best = std::min(best, rx * rx + ry * ry);
      }
      const double d = std::sqrt(best);
      double cls = 0.0;
      if (d <= lane_inner) {
        cls = 1.0;
      } else if (d <= lane_half_width) {
        cls = 2.0;
      }
      vals[row * r + col] = cls;
    }
  }
  return Tensor::from_values({r, r}, std::move(vals), Precision::f64);
}

Tensor goal_tensor(const FrameLabels& labels) {
  return Tensor::from_values(
      {2}, {0.1 * labels.goal[0], 0.1 * labels.goal[1]}, Precision::f64);
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

double expert_time_estimate(const Scenario& sc) {
  const RoutePath path(sc.route);
  double t = path.length() / expert_cruise(sc.weather);
  t += 1.0;  // sensor warm-up spent braked
  for (const TrafficLight& l : sc.lights) t += l.red_time;
  t += 2.5 * static_cast<double>(sc.agents.size());
  return t + 5.0;
}

RouteRunResult run_route(const Scenario& sc, const DrivePolicy& policy,
                         const RouteRunConfig& cfg) {
  sc.validate();
  if (!(cfg.tick > 0.0) || !(cfg.control_period > 0.0)) {
    throw ContractError("run_route: tick and control_period must be > 0");
  }
  const int64_t ratio = std::llround(cfg.control_period / cfg.tick);
  if (ratio < 1 ||
      std::fabs(ratio * cfg.tick - cfg.control_period) > 1e-9) {
    throw ContractError("run_route: control_period must be a tick multiple");
  }
  InfractionConfig icfg = cfg.infractions;
  if (icfg.timeout_budget <= 0.0) {
    icfg.timeout_budget = 2.0 * expert_time_estimate(sc);
  }

  World world(sc);
  const double route_len = world.route().length();
  ControlCommand cmd{0.0, 0.0, true};
  std::vector<TrajectorySample> traj;
  bool reached = false;
  const int64_t max_ticks =
      static_cast<int64_t>(std::ceil(icfg.timeout_budget / cfg.tick)) + 1;

  for (int64_t i = 0; i <= max_ticks; ++i) {
    if (i % ratio == 0) {
      world.snapshot();
      if (world.history_size() >= 3) {
        cmd = policy(world, world.synth_sensors(), cfg.control_period);
      } else {
        cmd = {0.0, 0.0, true};
      }
    }
    traj.push_back(world.sample());
    if (route_len - world.ego_route_s() <= cfg.goal_radius) {
      reached = true;
      break;
    }
    if (world.time() >= icfg.timeout_budget) break;
    world.step(cmd, cfg.tick);
  }

  InfractionScan scan = detect_infractions(traj, sc, icfg);
  if (scan.terminated) {
    reached = false;
    while (!traj.empty() && traj.back().t > scan.end_time + 1e-12) {
      traj.pop_back();
    }
  }
  double max_s = 0.0;
  for (const TrajectorySample& smp : traj) {
    max_s = std::max(max_s, smp.route_s);
  }
  const double fraction =
      reached ? 1.0 : std::clamp(max_s / route_len, 0.0, 1.0);

  RouteRunResult out;
  out.metrics = compute_metrics(scan.events, fraction, cfg.penalties);
  out.reached_goal = reached;
  out.duration = traj.empty() ? 0.0 : traj.back().t;
  out.trajectory = std::move(traj);
  return out;
}

DrivePolicy make_expert_policy(const ControllerConfig& ccfg) {
  ccfg.validate();
  auto lat = std::make_shared<PidState>(ccfg.make_lateral());
  auto lon = std::make_shared<PidState>(ccfg.make_longitudinal());
  return [ccfg, lat, lon](const World& world, const SensorBundle&,
                          double dt) {
    const Tensor wp = world.expert_waypoints();
    return waypoints_to_control(wp, world.ego_speed(), *lat, *lon, ccfg, dt);
  };
}

std::string format_route_report(const std::vector<RouteReportRow>& rows) {
  std::ostringstream out;
  out << "route\tseed\trc\tis\tds\tevents\n";
  double sum_rc = 0.0, sum_is = 0.0, sum_ds = 0.0;
  for (const RouteReportRow& row : rows) {
    out << row.route_id << "\t" << row.seed << "\t" << f4(row.result.rc)
        << "\t" << f4(row.result.is) << "\t" << f4(row.result.ds) << "\t";
    if (row.result.events.empty()) {
      out << "-";
    } else {
      for (size_t i = 0; i < row.result.events.size(); ++i) {
        const InfractionEvent& e = row.result.events[i];
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%s@%.2f",
                      infraction_name(e.kind), e.time);
        out << (i == 0 ? "" : ";") << buf;
      }
    }
    out << "\n";
    sum_rc += row.result.rc;
    sum_is += row.result.is;
    sum_ds += row.result.ds;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    out << "aggregate\t-\t" << f4(sum_rc / n) << "\t" << f4(sum_is / n)
        << "\t" << f4(sum_ds / n) << "\t-\n";
  }
  return out.str();
}

}  // namespace iidsu
