#pragma once

#include <cstdint>
#include <deque>

#include "iidsu/tensor.hpp"

namespace iidsu {

/// Discrete PID with a windowed integral (anti-windup: only the last
/// `window` contributions e*dt are summed). The derivative uses the
/// previous step's error and is 0 on the first step (no history).
struct PidState {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  int window = 20;

  std::deque<double> contributions;  // e*dt terms, newest last
  double integral = 0.0;
  double prev_error = 0.0;
  bool has_prev = false;

  void reset();
};

/// Advances the PID one step and returns kp*e + ki*integral + kd*de/dt.
/// dt must be positive (ContractError otherwise).
double pid_step(PidState& state, double error, double dt);

/// Actuation triple: steer in [-1, 1], throttle in [0, 1], brake is on/off
/// and forces throttle to 0.
struct ControlCommand {
  double steer = 0.0;
  double throttle = 0.0;
  bool brake = false;
};

/// Gains and thresholds of the waypoint-tracking controller. Defaults: the
/// usual waypoint-PID convention with kappa converting mean waypoint
/// spacing (0.5 s apart) into a speed setpoint.
struct ControllerConfig {
  double lat_kp = 1.25;
  double lat_ki = 0.75;
  double lat_kd = 0.3;
  double lon_kp = 5.0;
  double lon_ki = 0.5;
  double lon_kd = 1.0;
  double kappa = 2.0;             // desired speed = kappa * mean gap
  double brake_threshold = 0.4;   // m/s: below this, stop intent
  double overspeed_margin = 0.1;  // brake when 10% above desired
  int integral_window = 20;

  void validate() const;
  PidState make_lateral() const;
  PidState make_longitudinal() const;
};

/// Desired speed encoded by a waypoint plan: kappa times the mean distance
/// between consecutive waypoints ({4, 2} tensor).
double desired_speed(const Tensor& waypoints, const ControllerConfig& cfg);

/// Turns predicted waypoints into actuation. The aim point is the mean of
/// the first two waypoints; its bearing atan2(y, x) feeds the lateral PID
/// (positive steer = rightward). The speed error against desired_speed
/// feeds the longitudinal PID; brake engages on stop intent (desired below
/// brake_threshold) or overspeed, and zeroes throttle. speed must be >= 0.
ControlCommand waypoints_to_control(const Tensor& waypoints, double speed,
                                    PidState& lateral, PidState& longitudinal,
                                    const ControllerConfig& cfg, double dt);

}  // namespace iidsu
