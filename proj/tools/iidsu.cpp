// iidsu: synthetic data generation, training, closed-loop evaluation and
// visualization for the interpretable driving stack.
//
// Commands:
//   iidsu gen-data  --config FILE --out DIR --frames N --seed S
//   iidsu train     --config FILE --data DIR --out DIR
//   iidsu eval      --config FILE --ckpt FILE --routes N --report FILE
//   iidsu visualize --ckpt FILE --frame DIR --out DIR
//
// Exit status: 0 on success; otherwise one line "error: <category>: <detail>"
// on stderr with a category-specific code (shape 2, contract 3, numeric 4,
// io 5, config 6, internal 1).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "iidsu/analysis.hpp"
#include "iidsu/checkpoint.hpp"
#include "iidsu/config.hpp"
#include "iidsu/controller.hpp"
#include "iidsu/dataset.hpp"
#include "iidsu/density_codec.hpp"
#include "iidsu/image_io.hpp"
#include "iidsu/sim_harness.hpp"
#include "iidsu/trainer.hpp"

namespace {

using namespace iidsu;

class Flags {
 public:
  Flags(int argc, char** argv, int first,
        const std::vector<std::string>& allowed) {
    for (int i = first; i < argc; ++i) {
      std::string key = argv[i];
      if (key.rfind("--", 0) != 0)
        throw ConfigError("cli: expected a --flag, got '" + key + "'");
      key = key.substr(2);
      bool ok = false;
      for (const std::string& a : allowed) ok = ok || a == key;
      if (!ok) throw ConfigError("cli: unknown flag '--" + key + "'");
      if (i + 1 >= argc)
        throw ConfigError("cli: flag '--" + key + "' needs a value");
      values_[key] = argv[++i];
    }
  }

  const std::string& require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("cli: missing required flag '--" + key + "'");
    return it->second;
  }

  int64_t require_int(const std::string& key) const {
    const std::string& v = require(key);
    int64_t out = 0;
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end)
      throw ConfigError("cli: flag '--" + key + "' expects an integer, got '" +
                        v + "'");
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const Flags& flags) {
  const AppConfig cfg = load_config(flags.require("config"));
  const std::string out = flags.require("out");
  const int64_t frames = flags.require_int("frames");
  const uint64_t seed = static_cast<uint64_t>(flags.require_int("seed"));
  if (frames < 1) throw ConfigError("cli: --frames must be >= 1");
  (void)cfg;  // gen-data runs the scripted expert; the config pins intent

  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("gen-data: cannot create '" + out + "'");

  std::array<size_t, 4> weather_counts{};
  for (int64_t i = 0; i < frames; ++i) {
    const Scenario sc = generate_scenario(seed + static_cast<uint64_t>(i),
                                          static_cast<int>(i % 4));
    const double capture_time = 1.0 + 0.5 * static_cast<double>(i % 8);
    const SensorBundle bundle = collect_expert_frame(sc, capture_time);
    write_frame(out + "/" + frame_dir_name(static_cast<size_t>(i)), bundle);
    weather_counts[static_cast<size_t>(sc.weather)]++;
  }
  write_manifest(out, static_cast<size_t>(frames), weather_counts, seed);
  std::cout << "gen-data: wrote " << frames << " frames to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Flags& flags) {
  const AppConfig cfg = load_config(flags.require("config"));
  const Dataset ds(flags.require("data"));

  FusionModel model(cfg.model, cfg.model_seed);
  TrainRunConfig tc;
  tc.batch = cfg.train.batch;
  tc.steps = cfg.train.steps;
  tc.lr0 = cfg.train.lr;
  tc.momentum = cfg.train.momentum;
  tc.checkpoint_every = cfg.train.checkpoint_every;
  tc.sample_seed = cfg.train.seed;
  tc.out_dir = flags.require("out");

  const ModelConfig mc = cfg.model;
  const TrainRunResult result = run_training(
      model, [&](size_t i) { return assemble_sample(ds.frame(i), mc); },
      ds.size(), tc);
  std::cout << "train: " << result.steps_done << " steps, " << result.skipped
            << " corrupt samples skipped, final total loss "
            << result.final_loss.total << "\n"
            << "train: checkpoint " << result.checkpoint_path << "\n"
            << "train: loss log " << result.log_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const Flags& flags) {
  const AppConfig cfg = load_config(flags.require("config"));
  const int64_t routes = flags.require_int("routes");
  if (routes < 1) throw ConfigError("cli: --routes must be >= 1");

  const FusionModel model =
      load_model_as(flags.require("ckpt"), cfg.model, cfg.model_seed);
  const DrivePolicy policy = make_model_policy(model, cfg.controller);

  std::vector<RouteReportRow> rows;
  for (int64_t i = 0; i < routes; ++i) {
    RouteReportRow row;
    row.route_id = static_cast<int>(i);
    row.seed = cfg.eval.seed + static_cast<uint64_t>(i);
    const Scenario sc = generate_scenario(row.seed, cfg.eval.difficulty);
    row.result = run_route(sc, policy).metrics;
    rows.push_back(row);
  }

  const std::string report = format_route_report(rows);
  const std::string report_path = flags.require("report");
  std::ofstream os(report_path, std::ios::trunc);
  if (!os) throw IoError("eval: cannot write report '" + report_path + "'");
  os << report;

  // Echo the aggregate line for quick reading.
  const size_t last_nl = report.find_last_of('\n', report.size() - 2);
  std::cout << "eval: " << report.substr(last_nl + 1);
  return 0;
}

// ---------------------------------------------------------------------------
// visualize

struct Canvas {
  int64_t r;
  std::vector<uint8_t> rgb;  // r x r x 3

  explicit Canvas(int64_t r_) : r(r_), rgb(static_cast<size_t>(r * r * 3)) {}

  void put(int64_t row, int64_t col, uint8_t cr, uint8_t cg, uint8_t cb) {
    if (row < 0 || row >= r || col < 0 || col >= r) return;
    const size_t i = static_cast<size_t>((row * r + col) * 3);
    rgb[i] = cr;
    rgb[i + 1] = cg;
    rgb[i + 2] = cb;
  }

  void block(int64_t row, int64_t col, int64_t half, uint8_t cr, uint8_t cg,
             uint8_t cb) {
    for (int64_t dr = -half; dr <= half; ++dr)
      for (int64_t dc = -half; dc <= half; ++dc)
        put(row + dr, col + dc, cr, cg, cb);
  }

  void line(double r0, double c0, double r1, double c1, uint8_t cr, uint8_t cg,
            uint8_t cb) {
    const double steps =
        std::max(std::fabs(r1 - r0), std::fabs(c1 - c0)) * 2.0 + 1.0;
    const int n = static_cast<int>(steps);
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      put(static_cast<int64_t>(std::floor(r0 + (r1 - r0) * t)),
          static_cast<int64_t>(std::floor(c0 + (c1 - c0) * t)), cr, cg, cb);
    }
  }
};

/// Meters (ego frame: x forward, y right) -> fractional BEV pixel.
void bev_px(double x, double y, double s, double* row, double* col) {
  *row = -x * s;  // shifted below so row 0 is the far edge
  *col = (y + 16.0) * s;
}

void draw_box_outline(Canvas& canvas, const AgentBox& box, double s,
                      uint8_t cr, uint8_t cg, uint8_t cb) {
  const double ch = std::cos(box.theta), sh = std::sin(box.theta);
  const double hx = box.l / 2.0, hy = box.w / 2.0;
  double rows[4], cols[4];
  const double sx[4] = {+hx, +hx, -hx, -hx};
  const double sy[4] = {+hy, -hy, -hy, +hy};
  for (int i = 0; i < 4; ++i) {
    const double px = box.x + ch * sx[i] - sh * sy[i];
    const double py = box.y + sh * sx[i] + ch * sy[i];
    double row, col;
    bev_px(px, py, s, &row, &col);
    rows[i] = static_cast<double>(canvas.r - 1) + row;
    cols[i] = col;
  }
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    canvas.line(rows[i], cols[i], rows[j], cols[j], cr, cg, cb);
  }
}

int cmd_visualize(const Flags& flags) {
  const FusionModel model = load_model(flags.require("ckpt"));
  const SensorBundle bundle = read_frame(flags.require("frame"));
  const std::string out = flags.require("out");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("visualize: cannot create '" + out + "'");

  const ModelConfig& cfg = model.config();
  const ModelSample sample = assemble_sample(bundle, cfg);
  const ModelOutputs pred =
      model.forward(sample.image, sample.lidar, sample.goal);
  const int64_t r = cfg.r;
  const double s = static_cast<double>(r) / 32.0;
  const int64_t plane = r * r;

  // Input panel 1: the camera frame as captured.
  write_ppm(out + "/camera.ppm", 400, 300, bundle.camera_rgb);

  // Input panel 2: current LiDAR BEV (ground dim, above-ground bright).
  {
    Canvas canvas(r);
    const std::vector<double>& v = sample.lidar.data();
    for (int64_t i = 0; i < plane; ++i) {
      const double g = v[i] * 0.5 + v[3 * plane + i];
      const uint8_t byte =
          static_cast<uint8_t>(std::lround(std::min(1.0, g) * 255.0));
      canvas.rgb[static_cast<size_t>(i * 3)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 1)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 2)] = byte;
    }
    write_ppm(out + "/lidar.ppm", static_cast<int>(r), static_cast<int>(r),
              canvas.rgb);
  }

  // Output panel: BEV segmentation + detections + waypoints, Fig. 5 palette.
  {
    Canvas canvas(r);
    const std::vector<double>& logits = pred.bev.data();
    for (int64_t i = 0; i < plane; ++i) {
      int best = 0;
      double best_v = logits[i];
      for (int c = 1; c < 3; ++c) {
        const double v = logits[c * plane + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      uint8_t byte = 0;  // background: black
      if (best == 1) byte = 123;  // drivable area: grey
      if (best == 2) byte = 228;  // lane marking: white
      canvas.rgb[static_cast<size_t>(i * 3)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 1)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 2)] = byte;
    }
    for (const AgentBox& box : decode_density(pred.density, 0.3)) {
      if (box.timestep != 1) continue;  // current detections only
      draw_box_outline(canvas, box, s, 223, 218, 8);  // other vehicle: yellow
    }
    const std::vector<double>& wp = pred.waypoints.data();
    for (int i = 0; i < 4; ++i) {
      double row, col;
      bev_px(wp[i * 2], wp[i * 2 + 1], s, &row, &col);
      canvas.block(static_cast<int64_t>(std::floor(r - 1 + row)),
                   static_cast<int64_t>(std::floor(col)), 1, 0, 0,
                   255);  // ego waypoints: blue
    }
    canvas.block(r - 2, r / 2, 1, 255, 0, 0);  // ego vehicle: red
    write_ppm(out + "/bev.ppm", static_cast<int>(r), static_cast<int>(r),
              canvas.rgb);
  }

  // Per-timestep prediction panels: heatmap + decoded boxes.
  const std::vector<AgentBox> detections = decode_density(pred.density, 0.3);
  for (int t = 1; t <= 3; ++t) {
    Canvas canvas(r);
    const std::vector<double>& dm = pred.density.data();
    const int64_t heat_base = static_cast<int64_t>(t - 1) * 7 * plane;
    for (int64_t i = 0; i < plane; ++i) {
      const double h = std::clamp(dm[heat_base + i], 0.0, 1.0);
      const uint8_t byte = static_cast<uint8_t>(std::lround(h * 255.0));
      canvas.rgb[static_cast<size_t>(i * 3)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 1)] = byte;
      canvas.rgb[static_cast<size_t>(i * 3 + 2)] = byte;
    }
    for (const AgentBox& box : detections) {
      if (box.timestep != t) continue;
      draw_box_outline(canvas, box, s, 223, 218, 8);
    }
    write_ppm(out + "/pred_t" + std::to_string(t) + ".ppm",
              static_cast<int>(r), static_cast<int>(r), canvas.rgb);
  }

  // Text sidecar: predicted rule states and weather distribution.
  {
    std::ofstream os(out + "/rules.txt", std::ios::trunc);
    if (!os) throw IoError("visualize: cannot write rules.txt");
    char buf[160];
    const std::vector<double>& tf = pred.traffic.data();
    const std::vector<double>& wc = pred.weather.data();
    int best = 0;
    for (int i = 1; i < 4; ++i)
      if (wc[i] > wc[best]) best = i;
    std::snprintf(buf, sizeof(buf), "light_red %.4f\nsign_present %.4f\n",
                  tf[0], tf[1]);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "weather %s %.4f %.4f %.4f %.4f\n",
                  weather_name(static_cast<Weather>(best)), wc[0], wc[1],
                  wc[2], wc[3]);
    os << buf;
  }

  std::cout << "visualize: wrote panels to " << out << "\n";
  return 0;
}

int dispatch(int argc, char** argv) {
  if (argc < 2)
    throw ConfigError(
        "cli: usage: iidsu <gen-data|train|eval|visualize> --flags...");
  const std::string cmd = argv[1];
  if (cmd == "gen-data") {
    return cmd_gen_data(Flags(argc, argv, 2, {"config", "out", "frames",
                                              "seed"}));
  }
  if (cmd == "train") {
    return cmd_train(Flags(argc, argv, 2, {"config", "data", "out"}));
  }
  if (cmd == "eval") {
    return cmd_eval(Flags(argc, argv, 2, {"config", "ckpt", "routes",
                                          "report"}));
  }
  if (cmd == "visualize") {
    return cmd_visualize(Flags(argc, argv, 2, {"ckpt", "frame", "out"}));
  }
  throw ConfigError("cli: unknown command '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: contract: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 5;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
