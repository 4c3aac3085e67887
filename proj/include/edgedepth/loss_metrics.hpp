#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "edgedepth/tensor.hpp"

namespace edgedepth {

struct LossConfig {
  double lambda = 0.85;  // variance focus of the scale-invariant loss

  void validate() const;
};

// Paired prediction / ground-truth rasters with validity mask and the
// evaluation depth cap. Rasters are row-major with matching extents.
struct DepthPair {
  int height = 0;
  int width = 0;
  std::vector<double> pred;
  std::vector<double> gt;
  std::vector<std::uint8_t> mask;
  double cap_min = 0.0;
  double cap_max = std::numeric_limits<double>::infinity();

  std::size_t size() const { return pred.size(); }
};

// Scale-invariant log loss over the masked pixels of `pred`, differentiable
// w.r.t. pred only. Raises EmptyMaskError when no pixel is valid and
// DomainError when a masked depth is not strictly positive.
Tensor silog_loss(Graph& g, const Tensor& pred, const std::vector<double>& gt,
                  const std::vector<std::uint8_t>& mask, const LossConfig& cfg);

// Forward-only convenience evaluation on plain rasters.
double silog_loss_value(const DepthPair& pair, const LossConfig& cfg);

struct MetricsReport {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double absrel = 0.0;
  double sqrel = 0.0;
  double log10 = 0.0;

  std::string to_kv_line() const;
  std::string to_csv_row() const;
  static std::string csv_header();
};

// Threshold accuracies and error metrics over the masked pixels.
// Predictions are clamped into [cap_min, cap_max] first; ground truth
// outside (cap_min, cap_max] is masked out.
MetricsReport compute_metrics(const DepthPair& pair);

// Unweighted mean over per-image reports.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

}  // namespace edgedepth
