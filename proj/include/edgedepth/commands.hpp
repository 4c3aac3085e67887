#pragma once

#include <ostream>
#include <string>

#include "edgedepth/run_config.hpp"

namespace edgedepth {

// Exit codes shared by every command: 0 ok, 1 check failure, 2 config error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitConfigError = 2;

// Trains on <data_root>/train; writes loss_curve.csv plus final.ecdw and
// best.ecdw under out_dir.
int cmd_train(const RunConfig& cfg, std::ostream& out);

// Evaluates a checkpoint over <data_root>/<split>; writes metrics.csv
// (per-image rows plus a mean row) under out_dir and prints the mean as a
// key=value line.
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& split, std::ostream& out);

// Single-image forward pass from a DRF raster to a DRF depth raster.
int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& input_path, const std::string& output_path,
                std::ostream& out);

// Runs the finite-difference gradient suite; nonzero exit on any failure.
int cmd_gradcheck(const std::string& scope, std::ostream& out);

// Generates synthetic train/val splits under data_root.
int cmd_synth(const RunConfig& cfg, int train_count, int val_count, std::ostream& out);

}  // namespace edgedepth
