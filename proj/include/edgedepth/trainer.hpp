#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "edgedepth/data_io.hpp"
#include "edgedepth/depth_net.hpp"
#include "edgedepth/run_config.hpp"

namespace edgedepth {

// Adam with bias correction over a ParamStore, in registration order.
class AdamOptimizer {
 public:
  AdamOptimizer(const OptimConfig& cfg, ParamStore& params);

  // Applies one update from the grads currently held by the parameters.
  void step(double lr);

 private:
  OptimConfig cfg_;
  ParamStore& params_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Cosine annealing from lr_start (step 0) to lr_end (last step); constant
// lr_start when the schedule is disabled.
double scheduled_lr(const OptimConfig& cfg, std::int64_t step, std::int64_t total_steps);

struct TrainResult {
  std::vector<double> step_losses;  // mean batch loss per step
  double best_epoch_loss = 0.0;
  int best_epoch = -1;
};

// Invoked after every epoch; is_best marks a new lowest epoch-mean loss.
using EpochCallback = std::function<void(int epoch, double mean_loss, bool is_best)>;

// Deterministic training loop over an in-memory dataset. Writes one CSV row
// per step ("step,epoch,lr,loss") to `curve`. Augmentation streams are
// derived from (seed, epoch, sample), so runs with equal seeds are
// bit-identical. Aborts with NumericError naming the step if the loss stops
// being finite.
TrainResult train_loop(DepthNet& net, const RunConfig& cfg,
                       const std::vector<DepthSample>& dataset, std::ostream& curve,
                       std::ostream* info, const EpochCallback& on_epoch = {});

// Forward pass on one sample; returns the depth raster.
Raster predict_depth(DepthNet& net, const Raster& rgb);

// Per-image loss of a forward pass (used for logging and evaluation).
double sample_loss(DepthNet& net, const DepthSample& sample, const LossConfig& loss);

}  // namespace edgedepth
