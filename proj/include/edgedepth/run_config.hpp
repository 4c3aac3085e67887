#pragma once

#include <cstdint>
#include <string>

#include "edgedepth/data_io.hpp"
#include "edgedepth/depth_net.hpp"
#include "edgedepth/loss_metrics.hpp"

namespace edgedepth {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  bool cosine = true;  // false keeps lr_start constant
};

// Everything a run needs, resolvable from a preset plus key=value overrides.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  AugmentConfig augment;
  OptimConfig optim;
  int epochs = 50;
  int batch_size = 4;
  std::uint64_t seed = 1;
  std::string data_root = "data";
  std::string out_dir = "runs/out";
  double cap_min = 0.0;
  double cap_max = 10.0;
  CropMode crop_mode = CropMode::kNone;
  std::string preset = "desk";

  void validate() const;
  // Full key=value dump; every run echoes this so it can be reproduced
  // from its log alone.
  std::string resolved_text() const;
};

// desk | nyu | kitti
RunConfig preset_config(const std::string& name);

// Applies one "section.key=value" override; unknown keys or unparsable
// values raise ConfigError naming the key.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Preset defaults plus the overrides found in a key=value file
// ('#' starts a comment).
RunConfig load_run_config(const std::string& path, const std::string& preset);

// Parses a "min-max" cap range such as "0-80".
void apply_cap_range(RunConfig& cfg, const std::string& range);

}  // namespace edgedepth
