#pragma once

// Single-process training loop: SGD with momentum on a cosine-decayed
// learning rate, stateless per-step batch sampling, a tab-separated loss
// log, and periodic checkpoints with a trainer-state sidecar so an
// interrupted run resumes bit-for-bit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iidsu/dataset.hpp"
#include "iidsu/fusion_model.hpp"
#include "iidsu/losses.hpp"

namespace iidsu {

struct TrainRunConfig {
  LossWeights weights{};
  int batch = 8;
  int steps = 200;           // total horizon (also the cosine-decay period)
  double lr0 = 1e-3;
  double momentum = 0.9;
  int checkpoint_every = 0;  // 0: checkpoint only at the end
  uint64_t sample_seed = 1;
  std::string out_dir;       // receives log, checkpoints and trainer state
  bool resume = false;       // continue from out_dir's sidecar

  void validate() const;  // throws ConfigError
};

struct TrainRunResult {
  int first_step = 0;
  int steps_done = 0;
  int skipped = 0;  // corrupt samples skipped (and logged) across the run
  LossBreakdown final_loss{};
  std::string checkpoint_path;  // final model checkpoint
  std::string state_path;       // trainer-state sidecar
  std::string log_path;         // tab-separated loss log
};

/// Returns the sample for a dataset index; may throw to signal a corrupt
/// sample, which the loop skips (with a warning) and re-draws.
using SampleProvider = std::function<ModelSample(size_t)>;

/// lr0 * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(double lr0, int step, int total_steps);

/// One optimization step over `batch`: forwards every sample into a single
/// graph, backwards once over the mean total loss, then applies momentum
/// SGD to every parameter. `velocity` must be aligned with
/// model.params().entries() (use make_velocity). Returns the batch-mean
/// loss breakdown.
LossBreakdown train_step(FusionModel& model,
                         const std::vector<ModelSample>& batch,
                         const LossWeights& weights, double lr,
                         double momentum,
                         std::vector<std::vector<double>>& velocity);

/// Zero-initialized momentum buffers for every parameter of the model.
std::vector<std::vector<double>> make_velocity(const FusionModel& model);

std::string loss_log_header();
std::string loss_log_row(int step, const LossBreakdown& b, int skipped);

/// Runs (or resumes) a full training session. Writes `loss_log.tsv`,
/// `checkpoint.iidsu` and `trainer_state.iidsu` into cfg.out_dir; with
/// checkpoint_every > 0 both files are also refreshed on that cadence.
TrainRunResult run_training(FusionModel& model, const SampleProvider& provider,
                            size_t dataset_size, const TrainRunConfig& cfg);

}  // namespace iidsu
