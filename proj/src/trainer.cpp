#include "iidsu/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "iidsu/checkpoint.hpp"
#include "iidsu/nn.hpp"
#include "iidsu/ops.hpp"

namespace fs = std::filesystem;

namespace iidsu {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr const char* kLogName = "loss_log.tsv";
constexpr const char* kCkptName = "checkpoint.iidsu";
constexpr const char* kStateName = "trainer_state.iidsu";

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Per-step sampling stream: depends only on (seed, step) so an interrupted
/// run resumes with exactly the batches an uninterrupted run would draw.
Rng step_rng(uint64_t seed, int step) {
  return Rng(seed ^ (0x9E3779B97F4A7C15ull *
                     (static_cast<uint64_t>(step) + 1ull)));
}

std::vector<CheckpointRecord> state_records(const FusionModel& model, int step,
                                            const std::vector<std::vector<double>>& velocity) {
  std::vector<CheckpointRecord> records;
  records.push_back({"__trainer_step__", {1}, {static_cast<double>(step)}});
  const auto& entries = model.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    records.push_back(
        {"velocity." + entries[i].first, entries[i].second.shape(),
         velocity[i]});
  }
  return records;
}

}  // namespace

void TrainRunConfig::validate() const {
  weights.validate();
  if (batch < 1) throw ConfigError("trainer: batch must be >= 1");
  if (steps < 0) throw ConfigError("trainer: steps must be >= 0");
  if (!(lr0 > 0.0)) throw ConfigError("trainer: lr0 must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("trainer: momentum must lie in [0, 1)");
  if (checkpoint_every < 0)
    throw ConfigError("trainer: checkpoint_every must be >= 0");
  if (out_dir.empty()) throw ConfigError("trainer: out_dir is required");
}

double cosine_lr(double lr0, int step, int total_steps) {
  if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ContractError("cosine_lr: step outside [0, total_steps]");
  return lr0 * 0.5 *
         (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps));
}

std::vector<std::vector<double>> make_velocity(const FusionModel& model) {
  std::vector<std::vector<double>> velocity;
  velocity.reserve(model.params().entries().size());
  for (const auto& [name, tensor] : model.params().entries()) {
    velocity.emplace_back(static_cast<size_t>(tensor.numel()), 0.0);
  }
  return velocity;
}

LossBreakdown train_step(FusionModel& model,
                         const std::vector<ModelSample>& batch,
                         const LossWeights& weights, double lr,
                         double momentum,
                         std::vector<std::vector<double>>& velocity) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const auto& entries = model.params().entries();
  if (velocity.size() != entries.size())
    throw ContractError("train_step: velocity buffers misaligned with params");

  GradGraph g;
  Tensor acc;
  LossBreakdown mean{};
  for (const ModelSample& s : batch) {
    const ModelOutputs out = model.forward(s.image, s.lidar, s.goal, &g);
    const Tensor wp = waypoint_loss(out.waypoints, s.waypoints, &g);
    const DensityLossParts o = density_loss(out.density, s.density_map,
                                            s.density_mask, weights.alpha,
                                            weights.beta, &g);
    const Tensor m = bev_loss(out.bev, s.bev, &g);
    const TrafficLossParts tf = traffic_loss(out.traffic, s.traffic,
                                             weights.gamma, weights.delta, &g);
    const Tensor wc = weather_loss(out.weather, s.weather, &g);
    const TotalLoss tl = total_loss(wp, o, m, tf, wc, weights, &g);
    acc = acc.defined() ? add(acc, tl.total, &g) : tl.total;

    mean.total += tl.breakdown.total;
    mean.wp += tl.breakdown.wp;
    mean.o += tl.breakdown.o;
    mean.o_heat += tl.breakdown.o_heat;
    mean.o_reg += tl.breakdown.o_reg;
    mean.m += tl.breakdown.m;
    mean.tf += tl.breakdown.tf;
    mean.tf_light += tl.breakdown.tf_light;
    mean.tf_sign += tl.breakdown.tf_sign;
    mean.wc += tl.breakdown.wc;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  g.backward(scalar_mul(acc, inv, &g));
  for (double* f : {&mean.total, &mean.wp, &mean.o, &mean.o_heat, &mean.o_reg,
                    &mean.m, &mean.tf, &mean.tf_light, &mean.tf_sign,
                    &mean.wc}) {
    *f *= inv;
  }

  const Precision prec = model.params().precision();
  for (size_t i = 0; i < entries.size(); ++i) {
    Tensor t = entries[i].second;
    if (!t.has_grad()) continue;
    std::vector<double>& v = velocity[i];
    if (v.size() != static_cast<size_t>(t.numel()))
      throw ContractError("train_step: velocity buffer size mismatch at '" +
                          entries[i].first + "'");
    const std::vector<double>& grad = t.grad();
    std::vector<double>& data = t.data_mut();
    for (size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum * v[j] + grad[j];
      data[j] = quantize_value(data[j] - lr * v[j], prec);
    }
    t.zero_grad();
  }
  return mean;
}

std::string loss_log_header() {
  return "step\ttotal\twp\to\to_heat\to_reg\tm\ttf\ttf_light\ttf_sign\twc\t"
         "skipped\n";
}

std::string loss_log_row(int step, const LossBreakdown& b, int skipped) {
  std::string row = std::to_string(step);
  for (double v : {b.total, b.wp, b.o, b.o_heat, b.o_reg, b.m, b.tf,
                   b.tf_light, b.tf_sign, b.wc}) {
    row += "\t" + g17(v);
  }
  row += "\t" + std::to_string(skipped) + "\n";
  return row;
}

TrainRunResult run_training(FusionModel& model, const SampleProvider& provider,
                            size_t dataset_size, const TrainRunConfig& cfg) {
  cfg.validate();
  if (dataset_size == 0)
    throw ContractError("run_training: dataset_size must be positive");
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("trainer: cannot create out_dir '" + cfg.out_dir + "'");

  TrainRunResult result;
  result.log_path = cfg.out_dir + "/" + kLogName;
  result.checkpoint_path = cfg.out_dir + "/" + kCkptName;
  result.state_path = cfg.out_dir + "/" + kStateName;

  std::vector<std::vector<double>> velocity = make_velocity(model);
  int start_step = 0;
  if (cfg.resume) {
    if (!fs::exists(result.checkpoint_path) || !fs::exists(result.state_path))
      throw IoError("trainer: resume requested but '" + cfg.out_dir +
                    "' has no checkpoint/state pair");
    load_checkpoint(result.checkpoint_path, model.params());
    const auto [records, prec] = read_records(result.state_path);
    const auto& entries = model.params().entries();
    bool saw_step = false;
    size_t matched = 0;
    for (const CheckpointRecord& rec : records) {
      if (rec.name == "__trainer_step__") {
        start_step = static_cast<int>(rec.values.at(0));
        saw_step = true;
        continue;
      }
      if (rec.name.rfind("velocity.", 0) != 0)
        throw ContractError("trainer state: unexpected record '" + rec.name +
                            "'");
      const std::string pname = rec.name.substr(9);
      bool found = false;
      for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != pname) continue;
        if (rec.values.size() != velocity[i].size())
          throw ContractError("trainer state: velocity size mismatch at '" +
                              pname + "'");
        velocity[i] = rec.values;
        found = true;
        ++matched;
        break;
      }
      if (!found)
        throw ContractError("trainer state: unknown parameter '" + pname +
                            "'");
    }
    if (!saw_step || matched != entries.size())
      throw ContractError("trainer state '" + result.state_path +
                          "' is incomplete");
    if (start_step > cfg.steps)
      throw ContractError("trainer: resumed step exceeds the configured "
                          "horizon");
  }
  result.first_step = start_step;

  std::ofstream log(result.log_path,
                    cfg.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("trainer: cannot open loss log");
  if (!cfg.resume) log << loss_log_header();

  const auto save_all = [&](int next_step) {
    save_model(result.checkpoint_path, model);
    write_records(result.state_path, state_records(model, next_step, velocity),
                  Precision::f64);
  };

  for (int step = start_step; step < cfg.steps; ++step) {
    Rng rng = step_rng(cfg.sample_seed, step);
    std::vector<ModelSample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch));
    int step_skipped = 0;
    while (batch.size() < static_cast<size_t>(cfg.batch)) {
      const size_t idx =
          static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(dataset_size)));
      try {
        batch.push_back(provider(idx));
      } catch (const std::exception& e) {
        std::cerr << "trainer: step " << step << ": skipping corrupt sample "
                  << idx << ": " << e.what() << "\n";
        if (++step_skipped > 64)
          throw IoError("trainer: more than 64 corrupt samples in one step");
      }
    }
    result.skipped += step_skipped;

    const double lr = cosine_lr(cfg.lr0, step, cfg.steps);
    result.final_loss = train_step(model, batch, cfg.weights, lr, cfg.momentum,
                                   velocity);
    ++result.steps_done;
    log << loss_log_row(step, result.final_loss, step_skipped);
    log.flush();

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      save_all(step + 1);
    }
  }

  save_all(cfg.steps);
  return result;
}

}  // namespace iidsu
