#include "iidsu/controller.hpp"

#include <algorithm>
#include <cmath>

namespace iidsu {

void PidState::reset() {
  contributions.clear();
  integral = 0.0;
  prev_error = 0.0;
  has_prev = false;
}

double pid_step(PidState& state, double error, double dt) {
  if (!(dt > 0.0)) throw ContractError("pid_step: dt must be positive");
  if (state.window < 1)
    throw ContractError("pid_step: integral window must be >= 1");

  state.contributions.push_back(error * dt);
  state.integral += error * dt;
  while (static_cast<int>(state.contributions.size()) > state.window) {
    state.integral -= state.contributions.front();
    state.contributions.pop_front();
  }

  const double derivative =
      state.has_prev ? (error - state.prev_error) / dt : 0.0;
  state.prev_error = error;
  state.has_prev = true;

  return state.kp * error + state.ki * state.integral + state.kd * derivative;
}

void ControllerConfig::validate() const {
  const double gains[] = {lat_kp, lat_ki, lat_kd, lon_kp, lon_ki, lon_kd,
                          kappa,  brake_threshold, overspeed_margin};
  for (double g : gains)
    if (!std::isfinite(g) || g < 0.0)
      throw ConfigError("ControllerConfig: gains must be finite and >= 0");
  if (integral_window < 1)
    throw ConfigError("ControllerConfig: integral window must be >= 1");
}

PidState ControllerConfig::make_lateral() const {
  PidState s;
  s.kp = lat_kp;
  s.ki = lat_ki;
  s.kd = lat_kd;
  s.window = integral_window;
  return s;
}

PidState ControllerConfig::make_longitudinal() const {
  PidState s;
  s.kp = lon_kp;
  s.ki = lon_ki;
  s.kd = lon_kd;
  s.window = integral_window;
  return s;
}

double desired_speed(const Tensor& waypoints, const ControllerConfig& cfg) {
  if (waypoints.shape() != Shape({4, 2}))
    throw ContractError("desired_speed: waypoints must be {4, 2}, got " +
                        shape_str(waypoints.shape()));
  const std::vector<double>& w = waypoints.data();
  double mean_gap = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double dx = w[(i + 1) * 2] - w[i * 2];
    const double dy = w[(i + 1) * 2 + 1] - w[i * 2 + 1];
    mean_gap += std::hypot(dx, dy);
  }
  mean_gap /= 3.0;
  return cfg.kappa * mean_gap;
}

ControlCommand waypoints_to_control(const Tensor& waypoints, double speed,
                                    PidState& lateral, PidState& longitudinal,
                                    const ControllerConfig& cfg, double dt) {
  cfg.validate();
  if (!(speed >= 0.0))
    throw ContractError("waypoints_to_control: speed must be >= 0");
  if (waypoints.shape() != Shape({4, 2}))
    throw ContractError("waypoints_to_control: waypoints must be {4, 2}");

  const std::vector<double>& w = waypoints.data();
  const double aim_x = 0.5 * (w[0] + w[2]);
  const double aim_y = 0.5 * (w[1] + w[3]);
  // atan2(0, 0) = 0: an all-origin plan steers straight.
  const double heading_error = std::atan2(aim_y, aim_x);

  const double target = desired_speed(waypoints, cfg);

  ControlCommand cmd;
  cmd.steer = std::clamp(pid_step(lateral, heading_error, dt), -1.0, 1.0);
  cmd.throttle =
      std::clamp(pid_step(longitudinal, target - speed, dt), 0.0, 1.0);
  cmd.brake = target < cfg.brake_threshold ||
              speed > target * (1.0 + cfg.overspeed_margin);
  if (cmd.brake) cmd.throttle = 0.0;
  return cmd;
}

}  // namespace iidsu
