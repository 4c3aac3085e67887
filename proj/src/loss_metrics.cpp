#include "edgedepth/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace edgedepth {

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("loss: lambda must be in [0, 1], got " + std::to_string(lambda));
  }
}

Tensor silog_loss(Graph& g, const Tensor& pred, const std::vector<double>& gt,
                  const std::vector<std::uint8_t>& mask, const LossConfig& cfg) {
  cfg.validate();
  if (pred.numel() != static_cast<std::int64_t>(gt.size()) || gt.size() != mask.size()) {
    throw ShapeError("silog_loss: pred " + shape_str(pred.shape()) + " vs " +
                     std::to_string(gt.size()) + " ground-truth values and " +
                     std::to_string(mask.size()) + " mask entries");
  }
  std::vector<std::int64_t> keep;
  std::vector<double> log_gt;
  const auto pv = pred.values();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    if (!(gt[i] > 0.0)) {
      throw DomainError("silog_loss: masked ground truth must be positive, got " +
                        std::to_string(gt[i]));
    }
    if (!(pv[i] > 0.0)) {
      throw DomainError("silog_loss: masked prediction must be positive, got " +
                        std::to_string(pv[i]));
    }
    keep.push_back(static_cast<std::int64_t>(i));
    log_gt.push_back(std::log(gt[i]));
  }
  if (keep.empty()) {
    throw EmptyMaskError("silog_loss: mask has no valid pixels");
  }
  const int t = static_cast<int>(keep.size());

  Tensor pred_masked = g.gather(pred, std::move(keep), {t});
  Tensor diff = g.sub(g.constant({t}, std::move(log_gt)), g.log(pred_masked));
  // mean(g^2) - lambda*mean(g)^2, evaluated in the centered form
  // var(g) + (1-lambda)*mean(g)^2: both terms are nonnegative, so a
  // near-constant g cannot cancel the sum to garbage.
  Tensor mean = g.scale(g.reduce_sum_all(diff), 1.0 / t);
  Tensor centered = g.sub(diff, g.broadcast_to(mean, {t}));
  Tensor variance = g.scale(g.reduce_sum_all(g.mul(centered, centered)), 1.0 / t);
  Tensor mean_part = g.scale(g.mul(mean, mean), 1.0 - cfg.lambda);
  return g.sqrt(g.add(variance, mean_part));
}

double silog_loss_value(const DepthPair& pair, const LossConfig& cfg) {
  Graph g;
  Tensor pred = g.constant({pair.height, pair.width}, pair.pred);
  return silog_loss(g, pred, pair.gt, pair.mask, cfg).scalar();
}

namespace {

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

std::string MetricsReport::to_kv_line() const {
  std::ostringstream os;
  os << "delta1=" << format_value(delta1) << " delta2=" << format_value(delta2)
     << " delta3=" << format_value(delta3) << " absrel=" << format_value(absrel)
     << " sqrel=" << format_value(sqrel) << " rmse=" << format_value(rmse)
     << " rmse_log=" << format_value(rmse_log) << " log10=" << format_value(log10);
  return os.str();
}

std::string MetricsReport::to_csv_row() const {
  std::ostringstream os;
  os << format_value(delta1) << "," << format_value(delta2) << ","
     << format_value(delta3) << "," << format_value(absrel) << ","
     << format_value(sqrel) << "," << format_value(rmse) << ","
     << format_value(rmse_log) << "," << format_value(log10);
  return os.str();
}

std::string MetricsReport::csv_header() {
  return "delta1,delta2,delta3,absrel,sqrel,rmse,rmse_log,log10";
}

MetricsReport compute_metrics(const DepthPair& pair) {
  if (pair.pred.size() != pair.gt.size() || pair.gt.size() != pair.mask.size()) {
    throw ShapeError("compute_metrics: raster extents differ");
  }
  const double thr1 = 1.25;
  const double thr2 = 1.25 * 1.25;
  const double thr3 = 1.25 * 1.25 * 1.25;

  std::int64_t t = 0;
  std::int64_t hit1 = 0, hit2 = 0, hit3 = 0;
  double se = 0.0, se_log = 0.0, abs_rel = 0.0, sq_rel = 0.0, abs_log = 0.0;
  for (std::size_t i = 0; i < pair.pred.size(); ++i) {
    if (!pair.mask[i]) continue;
    const double gt = pair.gt[i];
    if (!(gt > pair.cap_min) || gt > pair.cap_max) continue;
    const double pred = std::min(std::max(pair.pred[i], pair.cap_min), pair.cap_max);
    if (!(gt > 0.0) || !(pred > 0.0)) {
      throw DomainError("compute_metrics: depths must be positive after capping");
    }
    ++t;
    const double ratio = std::max(gt / pred, pred / gt);
    if (ratio < thr1) ++hit1;
    if (ratio < thr2) ++hit2;
    if (ratio < thr3) ++hit3;
    const double diff = gt - pred;
    se += diff * diff;
    const double dlog10 = std::log10(gt) - std::log10(pred);
    se_log += dlog10 * dlog10;
    abs_rel += std::fabs(diff) / gt;
    sq_rel += diff * diff / gt;
    abs_log += std::fabs(dlog10);
  }
  if (t == 0) {
    throw EmptyMaskError("compute_metrics: no valid pixels after masking and capping");
  }
  const double n = static_cast<double>(t);
  MetricsReport r;
  r.delta1 = hit1 / n;
  r.delta2 = hit2 / n;
  r.delta3 = hit3 / n;
  r.rmse = std::sqrt(se / n);
  r.rmse_log = std::sqrt(se_log / n);
  r.absrel = abs_rel / n;
  r.sqrel = sq_rel / n;
  r.log10 = abs_log / n;
  return r;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) {
    throw EmptyMaskError("mean_report: no reports to aggregate");
  }
  MetricsReport m;
  for (const MetricsReport& r : reports) {
    m.delta1 += r.delta1;
    m.delta2 += r.delta2;
    m.delta3 += r.delta3;
    m.rmse += r.rmse;
    m.rmse_log += r.rmse_log;
    m.absrel += r.absrel;
    m.sqrel += r.sqrel;
    m.log10 += r.log10;
  }
  const double n = static_cast<double>(reports.size());
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  m.rmse /= n;
  m.rmse_log /= n;
  m.absrel /= n;
  m.sqrel /= n;
  m.log10 /= n;
  return m;
}

}  // namespace edgedepth
