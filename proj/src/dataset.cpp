#include "iidsu/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "iidsu/controller.hpp"
#include "iidsu/image_io.hpp"
#include "iidsu/ops.hpp"
#include "iidsu/sensor_pipeline.hpp"

namespace fs = std::filesystem;

namespace iidsu {

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* kind_name(AgentKind k) {
  return k == AgentKind::vehicle ? "vehicle" : "pedestrian";
}

AgentKind kind_from_name(const std::string& s) {
  if (s == "vehicle") return AgentKind::vehicle;
  if (s == "pedestrian") return AgentKind::pedestrian;
  throw IoError("labels: unknown agent kind '" + s + "'");
}

/// Time suffix for history index -2..0: "t-2", "t-1", "t0".
std::string time_suffix(int idx) {
  return idx == 0 ? "t0" : "t" + std::to_string(idx);
}

[[noreturn]] void bad_line(const std::string& line) {
  throw IoError("labels: malformed record '" + line + "'");
}

/// Rebuilds a tensor at the requested storage precision.
Tensor to_prec(const Tensor& t, Precision p) {
  if (t.precision() == p) return t;
  return Tensor::from_values(t.shape(), t.data(), p);
}

struct ModelInputs {
  Tensor image, lidar, goal;
};

/// The shared raw-capture -> network-input path (training and closed loop).
ModelInputs assemble_inputs(const SensorBundle& bundle,
                            const ModelConfig& cfg) {
  ModelInputs in;
  SensorConfig scfg;
  scfg.r = cfg.r;
  in.lidar = to_prec(build_pseudo_image(bundle.clouds, bundle.poses, scfg),
                     cfg.precision);
  const Tensor crop = crop_image(camera_to_raw_tensor(bundle.camera_rgb));
  if (cfg.r == 256) {
    in.image = to_prec(crop, cfg.precision);
  } else {
    if (256 % cfg.r != 0)
      throw ContractError("assemble_sample: camera downsampling needs r to "
                          "divide 256, got " + std::to_string(cfg.r));
    in.image = to_prec(avg_pool_2d(crop, 256 / cfg.r), cfg.precision);
  }
  in.goal = to_prec(goal_tensor(bundle.labels), cfg.precision);
  return in;
}

}  // namespace

std::string frame_dir_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06zu", index);
  return buf;
}

std::string serialize_labels(const FrameLabels& labels) {
  std::string out;
  const std::vector<double>& wp = labels.waypoints.data();
  for (int i = 0; i < 4; ++i) {
    out += "waypoint " + g17(wp[i * 2]) + " " + g17(wp[i * 2 + 1]) + "\n";
  }
  for (const AgentBox& a : labels.future_agents) {
    out += "agent " + std::to_string(a.timestep) + " " + kind_name(a.kind) +
           " " + g17(a.x) + " " + g17(a.y) + " " + g17(a.w) + " " + g17(a.l) +
           " " + g17(a.theta) + "\n";
  }
  for (const auto& v : labels.route_ego) {
    out += "route " + g17(v[0]) + " " + g17(v[1]) + "\n";
  }
  out += "lane_half_width " + g17(labels.lane_half_width) + "\n";
  out += "goal " + g17(labels.goal[0]) + " " + g17(labels.goal[1]) + "\n";
  out += "light_red " + std::to_string(labels.light_red != 0.0 ? 1 : 0) + "\n";
  out += "sign_present " +
         std::to_string(labels.sign_present != 0.0 ? 1 : 0) + "\n";
  out += std::string("weather ") + weather_name(labels.weather) + "\n";
  return out;
}

FrameLabels parse_labels(const std::string& text) {
  FrameLabels labels;
  std::vector<double> wp_vals;
  labels.route_ego.clear();
  bool saw_hw = false, saw_goal = false, saw_light = false, saw_sign = false,
       saw_weather = false;

  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream toks(line);
    std::string tag, extra;
    toks >> tag;
    if (tag == "waypoint") {
      double x = 0.0, y = 0.0;
      if (!(toks >> x >> y) || (toks >> extra)) bad_line(line);
      wp_vals.push_back(x);
      wp_vals.push_back(y);
    } else if (tag == "agent") {
      AgentBox a;
      std::string kind;
      if (!(toks >> a.timestep >> kind >> a.x >> a.y >> a.w >> a.l >>
            a.theta) ||
          (toks >> extra))
        bad_line(line);
      if (a.timestep < 1 || a.timestep > 3)
        throw IoError("labels: agent timestep must be 1..3, got " +
                      std::to_string(a.timestep));
      a.kind = kind_from_name(kind);
      labels.future_agents.push_back(a);
    } else if (tag == "route") {
      std::array<double, 2> v{};
      if (!(toks >> v[0] >> v[1]) || (toks >> extra)) bad_line(line);
      labels.route_ego.push_back(v);
    } else if (tag == "lane_half_width") {
      if (!(toks >> labels.lane_half_width) || (toks >> extra)) bad_line(line);
      saw_hw = true;
    } else if (tag == "goal") {
      if (!(toks >> labels.goal[0] >> labels.goal[1]) || (toks >> extra))
        bad_line(line);
      saw_goal = true;
    } else if (tag == "light_red" || tag == "sign_present") {
      int v = 0;
      if (!(toks >> v) || (toks >> extra) || (v != 0 && v != 1))
        bad_line(line);
      (tag == "light_red" ? labels.light_red : labels.sign_present) = v;
      (tag == "light_red" ? saw_light : saw_sign) = true;
    } else if (tag == "weather") {
      std::string name;
      if (!(toks >> name) || (toks >> extra)) bad_line(line);
      try {
        labels.weather = weather_from_name(name);
      } catch (const ContractError&) {
        bad_line(line);  // unknown tag is malformed input, an IoError here
      }
      saw_weather = true;
    } else {
      throw IoError("labels: unknown record '" + tag + "'");
    }
  }

  if (wp_vals.size() != 8)
    throw IoError("labels: expected exactly 4 waypoint records, got " +
                  std::to_string(wp_vals.size() / 2));
  if (labels.route_ego.size() < 2)
    throw IoError("labels: need at least 2 route records");
  if (!saw_hw || !saw_goal || !saw_light || !saw_sign || !saw_weather)
    throw IoError(
        "labels: missing required record (lane_half_width, goal, light_red, "
        "sign_present or weather)");
  labels.waypoints = Tensor::from_values({4, 2}, wp_vals);
  return labels;
}

void write_frame(const std::string& dir, const SensorBundle& bundle) {
  if (bundle.clouds.size() != 3 || bundle.poses.size() != 3)
    throw ContractError("write_frame: bundle must hold 3 clouds and 3 poses");
  if (bundle.camera_rgb.size() != 400u * 300u * 3u)
    throw ContractError("write_frame: camera buffer must be 400x300 RGB");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("frame '" + dir + "': cannot create directory");

  for (int i = 0; i < 3; ++i) {
    const PointCloud& pc = bundle.clouds[i];
    const int expected_idx = i - 2;
    if (pc.frame_time_index != expected_idx)
      throw ContractError("write_frame: clouds must be ordered t-2, t-1, t0");
    const std::string suffix = time_suffix(expected_idx);

    std::ofstream bin(dir + "/lidar_" + suffix + ".bin",
                      std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("frame '" + dir + "': cannot write lidar bin");
    for (const auto& p : pc.points) {
      const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                            static_cast<float>(p.z)};
      bin.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    if (!bin) throw IoError("frame '" + dir + "': lidar write failed");

    std::ofstream pose(dir + "/pose_" + suffix + ".txt", std::ios::trunc);
    if (!pose) throw IoError("frame '" + dir + "': cannot write pose");
    pose << g17(bundle.poses[i].x) << " " << g17(bundle.poses[i].y) << " "
         << g17(bundle.poses[i].yaw) << "\n";
  }

  write_ppm(dir + "/image.ppm", 400, 300, bundle.camera_rgb);

  std::ofstream lab(dir + "/labels.txt", std::ios::trunc);
  if (!lab) throw IoError("frame '" + dir + "': cannot write labels");
  lab << serialize_labels(bundle.labels);
}

SensorBundle read_frame(const std::string& dir) {
  std::vector<std::string> required;
  for (int idx = -2; idx <= 0; ++idx) {
    required.push_back("lidar_" + time_suffix(idx) + ".bin");
    required.push_back("pose_" + time_suffix(idx) + ".txt");
  }
  required.push_back("image.ppm");
  required.push_back("labels.txt");

  std::string missing;
  for (const std::string& name : required) {
    if (!fs::exists(dir + "/" + name)) {
      missing += missing.empty() ? name : (", " + name);
    }
  }
  if (!missing.empty())
    throw IoError("frame '" + dir + "' is missing: " + missing);

  SensorBundle bundle;
  for (int idx = -2; idx <= 0; ++idx) {
    const std::string suffix = time_suffix(idx);
    const std::string bin_path = dir + "/lidar_" + suffix + ".bin";
    std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
    if (!bin) throw IoError("frame '" + dir + "': cannot open lidar bin");
    const std::streamoff size = bin.tellg();
    if (size % 12 != 0)
      throw IoError("lidar '" + bin_path +
                    "': size is not a whole number of xyz triplets");
    bin.seekg(0);
    PointCloud pc;
    pc.frame_time_index = idx;
    pc.points.resize(static_cast<size_t>(size / 12));
    for (auto& p : pc.points) {
      float xyz[3];
      if (!bin.read(reinterpret_cast<char*>(xyz), sizeof(xyz)))
        throw IoError("lidar '" + bin_path + "': short read");
      p.x = xyz[0];
      p.y = xyz[1];
      p.z = xyz[2];
    }
    bundle.clouds.push_back(std::move(pc));

    std::ifstream pose(dir + "/pose_" + suffix + ".txt");
    EgoPose ep;
    std::string extra;
    if (!(pose >> ep.x >> ep.y >> ep.yaw) || (pose >> extra))
      throw IoError("pose '" + dir + "/pose_" + suffix +
                    ".txt': expected exactly 'x y yaw'");
    bundle.poses.push_back(ep);
  }

  const PpmImage img = read_ppm(dir + "/image.ppm");
  if (img.width != 400 || img.height != 300)
    throw IoError("frame '" + dir + "': camera image must be 400x300, got " +
                  std::to_string(img.width) + "x" + std::to_string(img.height));
  bundle.camera_rgb = img.rgb;

  std::ifstream lab(dir + "/labels.txt");
  std::ostringstream buf;
  buf << lab.rdbuf();
  bundle.labels = parse_labels(buf.str());
  return bundle;
}

void write_manifest(const std::string& root, size_t frames,
                    const std::array<size_t, 4>& weather_counts,
                    uint64_t seed) {
  std::ofstream os(root + "/manifest.txt", std::ios::trunc);
  if (!os) throw IoError("manifest '" + root + "': cannot open for writing");
  os << "frames " << frames << "\n";
  for (int w = 0; w < kWeatherClasses; ++w) {
    os << "weather " << weather_name(static_cast<Weather>(w)) << " "
       << weather_counts[w] << "\n";
  }
  os << "seed " << seed << "\n";
}

Dataset::Dataset(std::string root) : root_(std::move(root)) {
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("frame_", 0) == 0) dirs_.push_back(name);
  }
  if (ec) throw IoError("dataset '" + root_ + "': cannot scan directory");
  std::sort(dirs_.begin(), dirs_.end());
  if (dirs_.empty())
    throw IoError("dataset '" + root_ + "': no frame_* directories found");
}

const std::string& Dataset::dir(size_t i) const {
  if (i >= dirs_.size())
    throw ContractError("dataset: frame index out of range");
  return dirs_[i];
}

SensorBundle Dataset::frame(size_t i) const {
  return read_frame(root_ + "/" + dir(i));
}

ModelSample assemble_sample(const SensorBundle& bundle,
                            const ModelConfig& cfg) {
  cfg.validate();
  const Precision p = cfg.precision;
  ModelSample s;

  const ModelInputs in = assemble_inputs(bundle, cfg);
  s.image = in.image;
  s.lidar = in.lidar;
  s.goal = in.goal;
  s.waypoints = to_prec(bundle.labels.waypoints, p);
  const EncodedDensity enc = encode_density(bundle.labels.future_agents, cfg.r);
  s.density_map = to_prec(enc.map, p);
  s.density_mask = to_prec(enc.mask, p);
  s.bev = to_prec(bev_label_map(bundle.labels.route_ego,
                                bundle.labels.lane_half_width, cfg.r),
                  p);
  s.traffic = Tensor::from_values(
      {2}, {bundle.labels.light_red, bundle.labels.sign_present}, p);
  s.weather = static_cast<int>(bundle.labels.weather);
  return s;
}

SensorBundle collect_expert_frame(const Scenario& scenario,
                                  double capture_time) {
  scenario.validate();
  if (capture_time < 1.0)
    throw ContractError(
        "collect_expert_frame: capture_time must be >= 1.0 s so the sensor "
        "history is full");
  const double tick = 0.05;
  const int64_t ratio = 10;  // one control decision per 0.5 s
  World world(scenario);
  const DrivePolicy expert = make_expert_policy();
  const SensorBundle no_sensors;  // the expert only reads the world
  ControlCommand cmd{0.0, 0.0, true};
  for (int64_t i = 0; world.time() + 1e-9 < capture_time; ++i) {
    if (i % ratio == 0) {
      world.snapshot();
      if (world.history_size() >= 3) {
        cmd = expert(world, no_sensors, tick * ratio);
      } else {
        cmd = {0.0, 0.0, true};
      }
    }
    world.step(cmd, tick);
  }
  world.snapshot();
  return world.synth_sensors();
}

DrivePolicy make_model_policy(const FusionModel& model,
                              const ControllerConfig& ctrl) {
  ctrl.validate();
  auto lat = std::make_shared<PidState>(ctrl.make_lateral());
  auto lon = std::make_shared<PidState>(ctrl.make_longitudinal());
  const ModelConfig cfg = model.config();
  return [&model, cfg, ctrl, lat, lon](const World& world,
                                       const SensorBundle& bundle, double dt) {
    const ModelInputs in = assemble_inputs(bundle, cfg);
    const ModelOutputs out = model.forward(in.image, in.lidar, in.goal);
    return waypoints_to_control(out.waypoints, world.ego_speed(), *lat, *lon,
                                ctrl, dt);
  };
}

}  // namespace iidsu
