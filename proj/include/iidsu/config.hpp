#pragma once

// Flat `key = value` configuration with [model]/[train]/[eval]/[controller]
// sections. '#' starts a comment, blank lines are ignored, and unknown
// sections or keys are hard ConfigErrors so experiment files stay honest.

#include <cstdint>
#include <string>

#include "iidsu/controller.hpp"
#include "iidsu/fusion_model.hpp"

namespace iidsu {

struct TrainSection {
  int batch = 8;
  int steps = 200;
  double lr = 1e-3;        // initial rate; decays on a cosine schedule
  double momentum = 0.9;
  int checkpoint_every = 0;  // 0: checkpoint only at the end
  uint64_t seed = 1;         // batch-sampling seed

  void validate() const;  // throws ConfigError
};

struct EvalSection {
  int routes = 5;
  int difficulty = 0;
  uint64_t seed = 100;  // route i uses scenario seed `seed + i`

  void validate() const;  // throws ConfigError
};

struct AppConfig {
  ModelConfig model;
  uint64_t model_seed = 7;  // parameter-init seed ([model] seed)
  TrainSection train;
  EvalSection eval;
  ControllerConfig controller;

  void validate() const;
};

/// Parses configuration text; every value starts from the defaults above.
AppConfig parse_config(const std::string& text);
/// Loads and parses a configuration file (missing file -> IoError).
AppConfig load_config(const std::string& path);

}  // namespace iidsu
