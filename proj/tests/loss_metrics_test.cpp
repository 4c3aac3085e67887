#include "edgedepth/loss_metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "edgedepth/gradcheck.hpp"
#include "edgedepth/rng.hpp"

using namespace edgedepth;

namespace {

std::vector<double> random_values(std::uint64_t seed, std::int64_t n, double lo,
                                  double hi) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double silog_of(const std::vector<double>& pred, const std::vector<double>& gt,
                const std::vector<std::uint8_t>& mask, double lambda) {
  Graph g;
  Tensor p = g.constant({static_cast<int>(pred.size())}, pred);
  return silog_loss(g, p, gt, mask, LossConfig{lambda}).scalar();
}

DepthPair simple_pair(std::vector<double> pred, std::vector<double> gt) {
  DepthPair pair;
  pair.height = 1;
  pair.width = static_cast<int>(pred.size());
  pair.mask.assign(pred.size(), 1);
  pair.pred = std::move(pred);
  pair.gt = std::move(gt);
  pair.cap_min = 0.0;
  pair.cap_max = 1e9;
  return pair;
}

}  // namespace

// --- silog_loss ------------------------------------------------------------------

TEST(SilogTest, PerfectPredictionIsExactlyZero) {
  const std::vector<double> gt = random_values(1, 12, 0.5, 9.0);
  const std::vector<std::uint8_t> mask(12, 1);
  EXPECT_EQ(silog_of(gt, gt, mask, 0.85), 0.0);
}

TEST(SilogTest, FullyScaleInvariantAtLambdaOne) {
  const std::vector<double> gt = random_values(2, 16, 0.5, 9.0);
  const std::vector<std::uint8_t> mask(16, 1);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double s = std::exp(rng.uniform(-2.0, 2.0));
    std::vector<double> pred = gt;
    for (double& v : pred) v *= s;
    EXPECT_LT(std::fabs(silog_of(pred, gt, mask, 1.0)), 1e-9) << "scale " << s;
  }
}

TEST(SilogTest, ConstantOffsetClosedForm) {
  // pred = gt/2 shifts every log by ln 2; the loss collapses to
  // ln2 * sqrt(1 - lambda).
  const std::vector<double> gt = random_values(4, 20, 0.5, 9.0);
  std::vector<double> pred = gt;
  for (double& v : pred) v *= 0.5;
  const std::vector<std::uint8_t> mask(20, 1);
  const double expect = std::log(2.0) * std::sqrt(0.15);
  EXPECT_NEAR(silog_of(pred, gt, mask, 0.85), expect, 1e-9);
}

TEST(SilogTest, MaskedPixelsCarryNoGradientOrValue) {
  std::vector<double> gt = {1, 2, 3, 4};
  std::vector<std::uint8_t> mask = {1, 0, 1, 0};
  // Garbage at masked slots must not matter (even nonpositive pred).
  auto f = [&](Graph& g, const Tensor& x) { return silog_loss(g, x, gt, mask, {}); };
  Graph g;
  Tensor x = g.leaf({4}, {2.0, -7.0, 1.0, 123.0});
  Tensor loss = f(g, x);
  EXPECT_TRUE(std::isfinite(loss.scalar()));
  g.backward(loss);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[3], 0.0);
  EXPECT_NE(x.grad()[0], 0.0);
}

TEST(SilogTest, EmptyMaskRaises) {
  const std::vector<double> gt = {1, 2};
  const std::vector<std::uint8_t> mask = {0, 0};
  Graph g;
  Tensor p = g.constant({2}, {1, 2});
  EXPECT_THROW(silog_loss(g, p, gt, mask, {}), EmptyMaskError);
}

TEST(SilogTest, NonPositiveMaskedValuesRaise) {
  const std::vector<std::uint8_t> mask = {1, 1};
  Graph g;
  Tensor good = g.constant({2}, {1, 2});
  const std::vector<double> bad_gt = {1, -2};
  EXPECT_THROW(silog_loss(g, good, bad_gt, mask, {}), DomainError);
  Tensor bad_pred = g.constant({2}, {0.0, 2.0});
  const std::vector<double> gt = {1, 2};
  EXPECT_THROW(silog_loss(g, bad_pred, gt, mask, {}), DomainError);
}

TEST(SilogTest, LambdaOutsideUnitIntervalRejected) {
  const std::vector<double> gt = {1, 2};
  const std::vector<std::uint8_t> mask = {1, 1};
  Graph g;
  Tensor p = g.constant({2}, {1, 2});
  EXPECT_THROW(silog_loss(g, p, gt, mask, LossConfig{1.5}), ConfigError);
  EXPECT_THROW(silog_loss(g, p, gt, mask, LossConfig{-0.1}), ConfigError);
}

TEST(SilogTest, InvariantUnderJointRescaling) {
  const std::vector<double> gt = random_values(5, 15, 0.5, 9.0);
  const std::vector<double> pred = random_values(6, 15, 0.5, 9.0);
  const std::vector<std::uint8_t> mask(15, 1);
  const double base = silog_of(pred, gt, mask, 0.85);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const double s = std::exp(rng.uniform(-1.5, 1.5));
    std::vector<double> pred2 = pred, gt2 = gt;
    for (double& v : pred2) v *= s;
    for (double& v : gt2) v *= s;
    EXPECT_NEAR(silog_of(pred2, gt2, mask, 0.85), base, 1e-12);
  }
}

TEST(SilogTest, GradientMatchesFiniteDifferences) {
  const std::vector<double> gt = random_values(8, 24, 0.5, 9.0);
  std::vector<std::uint8_t> mask(24, 1);
  mask[5] = mask[13] = 0;
  auto f = [&](Graph& g, const Tensor& x) { return silog_loss(g, x, gt, mask, {}); };
  const GradCheckReport rep =
      grad_check(f, {4, 6}, random_values(9, 24, 0.5, 9.0), 1e-5, 1e-6);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

// --- compute_metrics ---------------------------------------------------------------

TEST(MetricsTest, PerfectPrediction) {
  const std::vector<double> gt = random_values(10, 9, 0.5, 9.0);
  MetricsReport r = compute_metrics(simple_pair(gt, gt));
  EXPECT_EQ(r.delta1, 1.0);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.rmse_log, 0.0);
  EXPECT_EQ(r.absrel, 0.0);
  EXPECT_EQ(r.sqrel, 0.0);
  EXPECT_EQ(r.log10, 0.0);
}

TEST(MetricsTest, GoldenVector) {
  // gt = [1,2,4,8], pred = [2,2,4,8]: only the first pixel errs, with
  // ratio 2 exceeding every threshold.
  MetricsReport r = compute_metrics(simple_pair({2, 2, 4, 8}, {1, 2, 4, 8}));
  EXPECT_NEAR(r.delta1, 0.75, 1e-12);
  EXPECT_NEAR(r.delta2, 0.75, 1e-12);
  EXPECT_NEAR(r.delta3, 0.75, 1e-12);
  EXPECT_NEAR(r.rmse, 0.5, 1e-12);
  EXPECT_NEAR(r.absrel, 0.25, 1e-12);
  EXPECT_NEAR(r.sqrel, 0.25, 1e-12);
  // log-space metrics for the same vector, derived with plain arithmetic
  const double dlog = std::log10(2.0);
  EXPECT_NEAR(r.rmse_log, std::sqrt(dlog * dlog / 4.0), 1e-12);
  EXPECT_NEAR(r.log10, dlog / 4.0, 1e-12);
}

TEST(MetricsTest, TwentyPercentOverestimate) {
  const std::vector<double> gt = random_values(11, 16, 0.5, 9.0);
  std::vector<double> pred = gt;
  for (double& v : pred) v *= 1.2;
  MetricsReport r = compute_metrics(simple_pair(pred, gt));
  EXPECT_EQ(r.delta1, 1.0);  // 1.2 < 1.25
  EXPECT_NEAR(r.absrel, 0.2, 1e-12);
}

TEST(MetricsTest, DeltasAreMonotone) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const std::vector<double> gt = random_values(100 + trial, 32, 0.2, 9.5);
    const std::vector<double> pred = random_values(200 + trial, 32, 0.2, 9.5);
    MetricsReport r = compute_metrics(simple_pair(pred, gt));
    EXPECT_LE(r.delta1, r.delta2);
    EXPECT_LE(r.delta2, r.delta3);
  }
}

TEST(MetricsTest, PermutationInvariant) {
  const std::vector<double> gt = random_values(13, 20, 0.3, 9.0);
  const std::vector<double> pred = random_values(14, 20, 0.3, 9.0);
  MetricsReport a = compute_metrics(simple_pair(pred, gt));

  std::vector<int> perm(20);
  for (int i = 0; i < 20; ++i) perm[i] = i;
  Rng rng(15);
  for (int i = 19; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  std::vector<double> gt2(20), pred2(20);
  for (int i = 0; i < 20; ++i) {
    gt2[i] = gt[perm[i]];
    pred2[i] = pred[perm[i]];
  }
  MetricsReport b = compute_metrics(simple_pair(pred2, gt2));
  EXPECT_DOUBLE_EQ(a.rmse, b.rmse);
  EXPECT_DOUBLE_EQ(a.delta1, b.delta1);
  EXPECT_DOUBLE_EQ(a.absrel, b.absrel);
  EXPECT_DOUBLE_EQ(a.log10, b.log10);
}

TEST(MetricsTest, CapMasksGroundTruthAndClampsPrediction) {
  DepthPair pair = simple_pair({100, 3, 5}, {10, 60, 5});
  pair.cap_min = 0.0;
  pair.cap_max = 50.0;
  // gt 60 is outside the cap; pred 100 clamps to 50 against gt 10.
  MetricsReport r = compute_metrics(pair);
  EXPECT_NEAR(r.delta1, 0.5, 1e-12);  // 5/5 passes, 50/10 fails
  EXPECT_NEAR(r.rmse, std::sqrt((40.0 * 40.0) / 2.0), 1e-12);
}

TEST(MetricsTest, AllPixelsCappedOutRaises) {
  DepthPair pair = simple_pair({1, 2}, {60, 70});
  pair.cap_max = 50.0;
  EXPECT_THROW(compute_metrics(pair), EmptyMaskError);
}

TEST(MetricsTest, SerializationFormats) {
  MetricsReport r;
  r.delta1 = 0.5;
  r.delta2 = 0.75;
  r.delta3 = 1.0;
  r.absrel = 0.125;
  r.sqrel = 0.25;
  r.rmse = 1.5;
  r.rmse_log = 0.2;
  r.log10 = 0.1;
  EXPECT_EQ(MetricsReport::csv_header(),
            "delta1,delta2,delta3,absrel,sqrel,rmse,rmse_log,log10");
  EXPECT_EQ(r.to_csv_row(), "0.5,0.75,1,0.125,0.25,1.5,0.2,0.1");
  EXPECT_EQ(r.to_kv_line(),
            "delta1=0.5 delta2=0.75 delta3=1 absrel=0.125 sqrel=0.25 rmse=1.5 "
            "rmse_log=0.2 log10=0.1");
}

TEST(MetricsTest, MeanReportAverages) {
  MetricsReport a, b;
  a.rmse = 1.0;
  b.rmse = 3.0;
  a.delta1 = 0.5;
  b.delta1 = 1.0;
  MetricsReport m = mean_report({a, b});
  EXPECT_DOUBLE_EQ(m.rmse, 2.0);
  EXPECT_DOUBLE_EQ(m.delta1, 0.75);
}
