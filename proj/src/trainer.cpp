#include "edgedepth/trainer.hpp"

#include <cmath>
#include <iomanip>

#include "edgedepth/loss_metrics.hpp"

namespace edgedepth {

AdamOptimizer::AdamOptimizer(const OptimConfig& cfg, ParamStore& params)
    : cfg_(cfg), params_(params) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params.all()[i].values.size(), 0.0);
    v_[i].assign(params.all()[i].values.size(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_.all()[i];
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double g = p.grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.values[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double scheduled_lr(const OptimConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (!cfg.cosine || total_steps <= 1) return cfg.lr_start;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return cfg.lr_end +
         0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(M_PI * progress));
}

namespace {

std::vector<double> image_values(const Raster& rgb) {
  return std::vector<double>(rgb.data.begin(), rgb.data.end());
}

}  // namespace

Raster predict_depth(DepthNet& net, const Raster& rgb) {
  const ModelConfig& mc = net.config();
  if (rgb.channels != 3 || rgb.height != mc.input_h || rgb.width != mc.input_w) {
    throw ConfigError("predict: image extents " + std::to_string(rgb.width) + "x" +
                      std::to_string(rgb.height) + " do not match the model (" +
                      std::to_string(mc.input_w) + "x" + std::to_string(mc.input_h) + ")");
  }
  Graph g;
  Tensor image = g.constant({3, mc.input_h, mc.input_w}, image_values(rgb));
  Tensor depth = net.forward(g, image);
  Raster out = Raster::filled(mc.input_w, mc.input_h, 1, 0.0f);
  const auto dv = depth.values();
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(dv[i]);
  }
  return out;
}

double sample_loss(DepthNet& net, const DepthSample& sample, const LossConfig& loss) {
  const ModelConfig& mc = net.config();
  Graph g;
  Tensor image = g.constant({3, mc.input_h, mc.input_w}, image_values(sample.rgb));
  Tensor depth = net.forward(g, image);
  const std::vector<double> gt(sample.depth.data.begin(), sample.depth.data.end());
  return silog_loss(g, depth, gt, sample_mask(sample), loss).scalar();
}

TrainResult train_loop(DepthNet& net, const RunConfig& cfg,
                       const std::vector<DepthSample>& dataset, std::ostream& curve,
                       std::ostream* info, const EpochCallback& on_epoch) {
  if (dataset.empty()) {
    throw ConfigError("train: dataset is empty");
  }
  const ModelConfig& mc = net.config();
  const int n = static_cast<int>(dataset.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps =
      static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

  AdamOptimizer adam(cfg.optim, net.params());
  TrainResult result;
  curve << "step,epoch,lr,loss\n";

  const bool augment_on = cfg.augment.hflip_prob > 0.0 || cfg.augment.rotate_deg > 0.0 ||
                          cfg.augment.brightness > 0.0 || cfg.augment.contrast > 0.0 ||
                          cfg.augment.color > 0.0;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int batch_n = std::min(cfg.batch_size, n - start);
      const double lr = scheduled_lr(cfg.optim, step, total_steps);
      net.params().zero_grads();
      double batch_loss = 0.0;
      for (int bi = 0; bi < batch_n; ++bi) {
        const int sample_idx = order[static_cast<std::size_t>(start + bi)];
        const DepthSample* sample = &dataset[static_cast<std::size_t>(sample_idx)];
        DepthSample augmented;
        if (augment_on) {
          Rng aug_rng = Rng(cfg.seed)
                            .fork(0x617567ull)
                            .fork(static_cast<std::uint64_t>(epoch))
                            .fork(static_cast<std::uint64_t>(sample_idx));
          augmented = augment(*sample, cfg.augment, aug_rng);
          sample = &augmented;
        }
        Graph g;
        Tensor image = g.constant({3, mc.input_h, mc.input_w}, image_values(sample->rgb));
        Tensor loss;
        try {
          Tensor depth = net.forward(g, image);
          const std::vector<double> gt(sample->depth.data.begin(),
                                       sample->depth.data.end());
          loss = silog_loss(g, depth, gt, sample_mask(*sample), cfg.loss);
        } catch (const NumericError& e) {
          throw NumericError("train: aborted at step " + std::to_string(step) + ": " +
                             e.what());
        }
        const double lv = loss.scalar();
        if (!std::isfinite(lv)) {
          throw NumericError("train: loss became non-finite at step " +
                             std::to_string(step));
        }
        batch_loss += lv;
        g.backward(loss);
        g.accumulate_param_grads(1.0 / batch_n);
      }
      batch_loss /= batch_n;
      adam.step(lr);

      curve << step << "," << epoch << "," << std::setprecision(17) << lr << ","
            << batch_loss << "\n";
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++step;
    }
    epoch_loss /= epoch_batches;
    const bool is_best = result.best_epoch < 0 || epoch_loss < result.best_epoch_loss;
    if (is_best) {
      result.best_epoch_loss = epoch_loss;
      result.best_epoch = epoch;
    }
    if (info != nullptr) {
      (*info) << "epoch " << epoch << " loss " << std::setprecision(8) << epoch_loss
              << "\n";
    }
    if (on_epoch) on_epoch(epoch, epoch_loss, is_best);
  }
  return result;
}

}  // namespace edgedepth
