#include "edgedepth/depth_net.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "edgedepth/gradcheck.hpp"
#include "edgedepth/loss_metrics.hpp"
#include "edgedepth/run_config.hpp"

using namespace edgedepth;

namespace {

std::vector<double> random_values(std::uint64_t seed, std::int64_t n, double lo,
                                  double hi) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

ModelConfig desk_config() { return preset_config("desk").model; }

// Minimal-width config for a given input size; keeps patch-count tests fast.
ModelConfig thin_config(int h, int w, int k) {
  ModelConfig cfg;
  cfg.input_h = h;
  cfg.input_w = w;
  cfg.enc_widths = {2, 2, 2, 2, 2};
  cfg.pem8 = {2, 3, 2, 4, 4};
  cfg.pem16 = {2, 3, 2, 2, 2};
  cfg.k = k;
  cfg.decoder_channels = 4;
  return cfg;
}

}  // namespace

// --- ModelConfig -------------------------------------------------------------

TEST(ModelConfigTest, RejectsBadExtentsAndOddChannels) {
  ModelConfig cfg = desk_config();
  cfg.input_h = 48;  // not a multiple of 32
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = desk_config();
  cfg.pem8.out_channels = 13;  // makes the attention width odd
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = desk_config();
  cfg.k = 4;  // desk config has 4 patches, so k must be <= 3
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = desk_config();
  cfg.max_depth = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelConfigTest, MismatchedPatchCountsRejected) {
  ModelConfig cfg = desk_config();
  cfg.pem16.patch_w = 4;  // 1/16 map with 4x4 patches misses (H/32)(W/32)
  cfg.pem16.patch_h = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// --- encoder -------------------------------------------------------------------

TEST(EncoderTest, StrideArithmetic) {
  ModelConfig cfg;
  cfg.input_h = 64;
  cfg.input_w = 64;
  cfg.enc_widths = {4, 8, 16, 32, 64};
  cfg.pem8 = {4, 4, 4, 4, 4};
  cfg.pem16 = {4, 4, 4, 2, 2};
  cfg.k = 3;
  DepthNet net(cfg, 1);
  Graph g;
  Tensor image = g.constant({3, 64, 64}, random_values(1, 3 * 64 * 64, 0, 1));
  const auto maps = net.encoder_forward(g, image);
  EXPECT_EQ(maps[0].shape(), (Shape{8, 16, 16}));
  EXPECT_EQ(maps[1].shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(maps[2].shape(), (Shape{32, 4, 4}));
  EXPECT_EQ(maps[3].shape(), (Shape{64, 2, 2}));
}

TEST(EncoderTest, ZeroInputZeroBiasGivesZeroFeatures) {
  DepthNet net(desk_config(), 2);
  Graph g;
  Tensor image = g.constant({3, 64, 64}, std::vector<double>(3 * 64 * 64, 0.0));
  for (const Tensor& m : net.encoder_forward(g, image)) {
    for (double v : m.values()) EXPECT_DOUBLE_EQ(v, 0.0);
  }
}

TEST(EncoderTest, DeterministicAcrossInstances) {
  const std::vector<double> img = random_values(3, 3 * 64 * 64, 0, 1);
  auto run = [&]() {
    DepthNet net(desk_config(), 42);
    Graph g;
    const auto maps = net.encoder_forward(g, g.constant({3, 64, 64}, img));
    return std::vector<double>(maps[3].values().begin(), maps[3].values().end());
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(EncoderTest, WrongExtentsAreShapeError) {
  DepthNet net(desk_config(), 4);
  Graph g;
  Tensor image = g.constant({3, 32, 64}, std::vector<double>(3 * 32 * 64, 0.0));
  EXPECT_THROW(net.encoder_forward(g, image), ShapeError);
}

// --- patch stages ------------------------------------------------------------

TEST(PatchStageTest, IndoorShapeGives300PatchesFromBothStages) {
  DepthNet net(thin_config(480, 640, 2), 5);
  Graph g;
  Tensor f8 = g.constant({2, 60, 80}, random_values(6, 2 * 60 * 80, -1, 1));
  Tensor f16 = g.constant({2, 30, 40}, random_values(7, 2 * 30 * 40, -1, 1));
  EXPECT_EQ(net.pem_forward(g, f8, 0).n_patches, 300);
  EXPECT_EQ(net.pem_forward(g, f16, 1).n_patches, 300);
}

TEST(PatchStageTest, DrivingShapeGives418PatchesFromBothStages) {
  DepthNet net(thin_config(352, 1216, 2), 8);
  Graph g;
  Tensor f8 = g.constant({2, 44, 152}, random_values(9, 2 * 44 * 152, -1, 1));
  Tensor f16 = g.constant({2, 22, 76}, random_values(10, 2 * 22 * 76, -1, 1));
  EXPECT_EQ(net.pem_forward(g, f8, 0).n_patches, 418);
  EXPECT_EQ(net.pem_forward(g, f16, 1).n_patches, 418);
}

TEST(PatchStageTest, DeskShapeGivesFourPatches) {
  DepthNet net(desk_config(), 11);
  Graph g;
  Tensor f8 = g.constant({16, 8, 8}, random_values(12, 16 * 8 * 8, -1, 1));
  EdgeFeatureMapResult r = net.pem_forward(g, f8, 0);
  EXPECT_EQ(r.n_patches, 4);
  EXPECT_EQ(r.features.shape(), (Shape{12, 4}));
}

TEST(PatchStageTest, PatchCountFollowsGridFormulaOnRandomConfigs) {
  Rng rng(13);
  for (int trial = 0; trial < 12; ++trial) {
    const int h = 32 * rng.uniform_int(1, 8);
    const int w = 32 * rng.uniform_int(1, 8);
    const int np = (h / 32) * (w / 32);
    if (np < 2) continue;
    DepthNet net(thin_config(h, w, 1), 100 + trial);
    Graph g;
    Tensor f8 = g.constant({2, h / 8, w / 8},
                           random_values(200 + trial, 2 * (h / 8) * (w / 8), -1, 1));
    Tensor f16 = g.constant({2, h / 16, w / 16},
                            random_values(300 + trial, 2 * (h / 16) * (w / 16), -1, 1));
    EXPECT_EQ(net.pem_forward(g, f8, 0).n_patches, np);
    EXPECT_EQ(net.pem_forward(g, f16, 1).n_patches, np);
  }
}

// --- attention stage -----------------------------------------------------------

TEST(AttentionTest, SinglePatchIsResidualPlusValue) {
  Graph g;
  Tensor feat = g.constant({3, 1}, {0.5, -1.0, 2.0});
  Tensor kw = g.constant({3, 3}, random_values(14, 9, -1, 1));
  Tensor qw = g.constant({3, 3}, random_values(15, 9, -1, 1));
  Tensor vw = g.constant({3, 3}, random_values(16, 9, -1, 1));
  Tensor kb = g.constant({3}, random_values(17, 3, -1, 1));
  Tensor qb = g.constant({3}, random_values(18, 3, -1, 1));
  Tensor vb = g.constant({3}, random_values(19, 3, -1, 1));
  AttentionProbe probe;
  Tensor out = self_attention(g, feat, kw, kb, qw, qb, vw, vb, &probe);
  EXPECT_DOUBLE_EQ(probe.attention.values()[0], 1.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(out.values()[i], feat.values()[i] + probe.values.values()[i], 1e-12);
  }
}

TEST(AttentionTest, ZeroValuePathIsIdentity) {
  Graph g;
  Tensor feat = g.constant({2, 4}, random_values(20, 8, -1, 1));
  Tensor kw = g.constant({2, 2}, random_values(21, 4, -1, 1));
  Tensor qw = g.constant({2, 2}, random_values(22, 4, -1, 1));
  Tensor vw = g.constant({2, 2}, {0, 0, 0, 0});
  Tensor zb = g.constant({2}, {0, 0});
  Tensor out = self_attention(g, feat, kw, zb, qw, zb, vw, zb);
  for (int i = 0; i < 8; ++i) {
    EXPECT_DOUBLE_EQ(out.values()[i], feat.values()[i]);
  }
}

TEST(AttentionTest, MatchesHandComputedTwoPatch) {
  // Plain-double evaluation of the scaled dot-product formula, kept fully
  // independent of the tensor library.
  const double feat[2][2] = {{1.0, -0.5}, {0.25, 2.0}};  // [channel][patch]
  const double kw[2][2] = {{0.5, -1.0}, {0.75, 0.25}};
  const double qw[2][2] = {{-0.25, 1.5}, {1.0, 0.5}};
  const double vw[2][2] = {{2.0, 0.0}, {-1.0, 1.0}};
  const double kb[2] = {0.1, -0.2};
  const double qb[2] = {0.0, 0.3};
  const double vb[2] = {-0.5, 0.25};

  double keys[2][2], queries[2][2], values[2][2];
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 2; ++i) {
      keys[c][i] = kw[c][0] * feat[0][i] + kw[c][1] * feat[1][i] + kb[c];
      queries[c][i] = qw[c][0] * feat[0][i] + qw[c][1] * feat[1][i] + qb[c];
      values[c][i] = vw[c][0] * feat[0][i] + vw[c][1] * feat[1][i] + vb[c];
    }
  }
  double expect[2][2];
  const double inv_sqrt_d = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 2; ++i) {  // query patch
    double scores[2];
    for (int j = 0; j < 2; ++j) {
      scores[j] = (queries[0][i] * keys[0][j] + queries[1][i] * keys[1][j]) * inv_sqrt_d;
    }
    const double mx = std::max(scores[0], scores[1]);
    const double e0 = std::exp(scores[0] - mx), e1 = std::exp(scores[1] - mx);
    const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    for (int c = 0; c < 2; ++c) {
      expect[c][i] = feat[c][i] + a0 * values[c][0] + a1 * values[c][1];
    }
  }

  Graph g;
  Tensor out = self_attention(
      g, g.constant({2, 2}, {feat[0][0], feat[0][1], feat[1][0], feat[1][1]}),
      g.constant({2, 2}, {kw[0][0], kw[0][1], kw[1][0], kw[1][1]}),
      g.constant({2}, {kb[0], kb[1]}),
      g.constant({2, 2}, {qw[0][0], qw[0][1], qw[1][0], qw[1][1]}),
      g.constant({2}, {qb[0], qb[1]}),
      g.constant({2, 2}, {vw[0][0], vw[0][1], vw[1][0], vw[1][1]}),
      g.constant({2}, {vb[0], vb[1]}));
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(out.values()[c * 2 + i], expect[c][i], 1e-12);
    }
  }
}

// --- full forward and the attention-stage state ------------------------------------

TEST(ForwardTest, ChannelBookkeepingAndAttentionRows) {
  DepthNet net(desk_config(), 23);
  const int ct = net.config().concat_rows();
  Graph g;
  Tensor image = g.constant({3, 64, 64}, random_values(24, 3 * 64 * 64, 0, 1));
  EamState state;
  Tensor depth = net.forward(g, image, &state);

  EXPECT_EQ(state.concat_input.shape()[0], ct);
  EXPECT_EQ(state.reduced.shape()[0], ct / 2);
  EXPECT_EQ(state.edge_stack.shape()[0], ct);
  EXPECT_EQ(state.attended.shape()[0], ct);
  EXPECT_EQ(state.keys.shape(), (Shape{ct, 4}));
  EXPECT_EQ(state.queries.shape(), (Shape{ct, 4}));
  EXPECT_EQ(state.values.shape(), (Shape{ct, 4}));
  EXPECT_EQ(state.output.shape(), (Shape{24, 2, 2}));
  EXPECT_EQ(depth.shape(), (Shape{1, 64, 64}));

  // Attention rows are a softmax each.
  const auto av = state.attention.values();
  for (int row = 0; row < 4; ++row) {
    double sum = 0;
    for (int col = 0; col < 4; ++col) sum += av[row * 4 + col];
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }

  // The first half of the stacked edge features is the reduced map itself.
  const auto stack = state.edge_stack.values();
  const auto red = state.reduced.values();
  for (std::size_t i = 0; i < red.size(); ++i) {
    EXPECT_EQ(stack[i], red[i]);
  }
}

TEST(ForwardTest, OutputsInsideOpenDepthInterval) {
  ModelConfig cfg = desk_config();
  cfg.max_depth = 80.0;
  DepthNet net(cfg, 25);
  // Blow the weights up to saturate the sigmoid head.
  for (Parameter& p : net.params().all()) {
    for (double& v : p.values) v *= 60.0;
  }
  Graph g;
  Tensor image = g.constant({3, 64, 64}, random_values(26, 3 * 64 * 64, 0, 1));
  Tensor depth = net.forward(g, image);
  for (double v : depth.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 80.0);
  }
}

TEST(ForwardTest, DoublingMaxDepthDoublesEveryPixel) {
  ModelConfig cfg = desk_config();
  DepthNet a(cfg, 27);
  cfg.max_depth = 2.0 * cfg.max_depth;
  DepthNet b(cfg, 27);
  const std::vector<double> img = random_values(28, 3 * 64 * 64, 0, 1);
  Graph ga, gb;
  Tensor da = a.forward(ga, ga.constant({3, 64, 64}, img));
  Tensor db = b.forward(gb, gb.constant({3, 64, 64}, img));
  for (std::size_t i = 0; i < static_cast<std::size_t>(da.numel()); ++i) {
    EXPECT_EQ(db.values()[i], 2.0 * da.values()[i]);
  }
}

TEST(ForwardTest, AblatedModelSkipsPatchStages) {
  ModelConfig cfg = desk_config();
  cfg.use_patch_modules = false;
  DepthNet net(cfg, 29);
  EXPECT_FALSE(net.params().contains("pem8.embed.w"));
  EXPECT_EQ(net.config().concat_rows(), cfg.enc_widths[4]);
  Graph g;
  EamState state;
  Tensor depth = net.forward(
      g, g.constant({3, 64, 64}, random_values(30, 3 * 64 * 64, 0, 1)), &state);
  EXPECT_EQ(state.concat_input.shape()[0], cfg.enc_widths[4]);
  EXPECT_EQ(depth.shape(), (Shape{1, 64, 64}));
}

// --- ASPP -------------------------------------------------------------------------

namespace {

AsppWeights make_aspp(Graph& g, int in_ch, int branch_ch, int out_ch, int n_rates,
                      bool pointwise, bool global, std::uint64_t seed) {
  Rng rng(seed);
  auto conv = [&](int co, int ci, int k) {
    Tensor w = g.constant(
        {co, ci, k, k},
        random_values(rng.next_u64(), static_cast<std::int64_t>(co) * ci * k * k, -0.5, 0.5));
    Tensor b = g.constant({co}, std::vector<double>(static_cast<std::size_t>(co), 0.0));
    return std::pair<Tensor, Tensor>(w, b);
  };
  AsppWeights aw;
  if (pointwise) std::tie(aw.pointwise_w, aw.pointwise_b) = conv(branch_ch, in_ch, 1);
  for (int i = 0; i < n_rates; ++i) aw.dilated.push_back(conv(branch_ch, in_ch, 3));
  if (global) std::tie(aw.global_w, aw.global_b) = conv(branch_ch, in_ch, 1);
  const int branches = n_rates + (pointwise ? 1 : 0) + (global ? 1 : 0);
  std::tie(aw.fuse_w, aw.fuse_b) = conv(out_ch, branches * branch_ch, 1);
  return aw;
}

}  // namespace

TEST(AsppTest, ConstantInputStaysConstant) {
  Graph g;
  Tensor x = g.constant({3, 4, 4}, std::vector<double>(48, 1.7));
  AsppWeights aw = make_aspp(g, 3, 2, 5, 2, true, true, 31);
  Tensor out = aspp_forward(g, x, aw, {1, 2}, 0.2);
  EXPECT_EQ(out.shape(), (Shape{5, 4, 4}));
  for (int c = 0; c < 5; ++c) {
    const double first = out.values()[c * 16];
    for (int i = 0; i < 16; ++i) {
      EXPECT_NEAR(out.values()[c * 16 + i], first, 1e-12);
    }
  }
}

TEST(AsppTest, SingleRateIdentityFuseIsPlainConv) {
  const std::vector<double> xv = random_values(32, 50, -1, 1);
  // Edge-replicated 7x7 copy built by hand for the reference conv.
  std::vector<double> padded(2 * 7 * 7);
  for (int c = 0; c < 2; ++c) {
    for (int y = -1; y < 6; ++y) {
      for (int x = -1; x < 6; ++x) {
        const int yy = std::clamp(y, 0, 4), xx = std::clamp(x, 0, 4);
        padded[(c * 7 + (y + 1)) * 7 + (x + 1)] = xv[(c * 5 + yy) * 5 + xx];
      }
    }
  }
  Graph g;
  Tensor x = g.constant({2, 5, 5}, xv);
  Tensor cw = g.constant({3, 2, 3, 3}, random_values(33, 54, -1, 1));
  Tensor cb = g.constant({3}, {0.1, -0.2, 0.3});
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  AsppWeights aw;
  aw.dilated.emplace_back(cw, cb);
  aw.fuse_w = g.constant({3, 3, 1, 1}, eye);
  aw.fuse_b = g.constant({3}, {0, 0, 0});
  Tensor out = aspp_forward(g, x, aw, {1}, 0.2);
  Tensor ref = g.leaky_relu(g.conv2d(g.constant({2, 7, 7}, padded), cw, &cb, {1, 0, 1}), 0.2);
  ASSERT_EQ(out.shape(), ref.shape());
  for (std::size_t i = 0; i < static_cast<std::size_t>(out.numel()); ++i) {
    EXPECT_DOUBLE_EQ(out.values()[i], ref.values()[i]);
  }
}

TEST(AsppTest, HandCheckedDilatedBranch) {
  // 1 channel, 2x2 input {1,2;3,4}, rates (1,2) with pad = rate (edge
  // replication), all-ones kernels, fuse averaging the two branches.
  //
  // rate 1 pads to {1,1,2,2; 1,1,2,2; 3,3,4,4; 3,3,4,4}; the four 3x3
  // window sums are 18, 21, 24, 27. rate 2 pads to the 6x6 version and its
  // dilated taps land on the same replicated values, giving 18, 21, 24, 27
  // again.
  Graph g;
  Tensor x = g.constant({1, 2, 2}, {1, 2, 3, 4});
  Tensor ones = g.constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor zero_b = g.constant({1}, {0});
  AsppWeights aw;
  aw.dilated.emplace_back(ones, zero_b);
  aw.dilated.emplace_back(ones, zero_b);
  const std::vector<double> half = {0.5, 0.5};
  aw.fuse_w = g.constant({1, 2, 1, 1}, half);
  aw.fuse_b = g.constant({1}, {0});
  Tensor out = aspp_forward(g, x, aw, {1, 2}, 0.2);
  const double expect[4] = {18, 21, 24, 27};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(out.values()[i], expect[i], 1e-12);
  }
}

// --- decoder ---------------------------------------------------------------------

namespace {

DecoderWeights make_decoder(Graph& g, int dec_ch, int skip_ch, std::uint64_t seed,
                            double scale) {
  Rng rng(seed);
  auto conv = [&](int co, int ci, int k) {
    std::vector<double> w = random_values(
        rng.next_u64(), static_cast<std::int64_t>(co) * ci * k * k, -0.5, 0.5);
    for (double& v : w) v *= scale;
    Tensor wt = g.constant({co, ci, k, k}, w);
    Tensor bt = g.constant({co}, std::vector<double>(static_cast<std::size_t>(co), 0.0));
    return std::pair<Tensor, Tensor>(wt, bt);
  };
  DecoderWeights dw;
  std::tie(dw.lat16_w, dw.lat16_b) = conv(dec_ch, skip_ch, 1);
  std::tie(dw.lat8_w, dw.lat8_b) = conv(dec_ch, skip_ch, 1);
  std::tie(dw.lat4_w, dw.lat4_b) = conv(dec_ch, skip_ch, 1);
  std::tie(dw.smooth16_w, dw.smooth16_b) = conv(dec_ch, dec_ch, 3);
  std::tie(dw.smooth8_w, dw.smooth8_b) = conv(dec_ch, dec_ch, 3);
  std::tie(dw.smooth4_w, dw.smooth4_b) = conv(dec_ch, dec_ch, 3);
  std::tie(dw.head_w, dw.head_b) = conv(1, 3 * dec_ch, 3);
  return dw;
}

}  // namespace

TEST(DecoderTest, OutputShapeAndOpenInterval) {
  Graph g;
  Tensor top = g.constant({4, 2, 2}, random_values(34, 16, -1, 1));
  Tensor s16 = g.constant({3, 4, 4}, random_values(35, 48, -1, 1));
  Tensor s8 = g.constant({3, 8, 8}, random_values(36, 192, -1, 1));
  Tensor s4 = g.constant({3, 16, 16}, random_values(37, 768, -1, 1));
  DecoderWeights dw = make_decoder(g, 4, 3, 38, 40.0);  // large weights saturate
  Tensor out = decoder_forward(g, top, s16, s8, s4, dw, 64, 64, 0.2);
  EXPECT_EQ(out.shape(), (Shape{1, 64, 64}));
  for (double v : out.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(DecoderTest, AllZeroWeightsGiveConstantHalf) {
  Graph g;
  Tensor top = g.constant({4, 2, 2}, random_values(39, 16, -1, 1));
  Tensor s16 = g.constant({3, 4, 4}, random_values(40, 48, -1, 1));
  Tensor s8 = g.constant({3, 8, 8}, random_values(41, 192, -1, 1));
  Tensor s4 = g.constant({3, 16, 16}, random_values(42, 768, -1, 1));
  DecoderWeights dw = make_decoder(g, 4, 3, 43, 0.0);  // zero weights, zero biases
  Tensor out = decoder_forward(g, top, s16, s8, s4, dw, 64, 64, 0.2);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

// --- end-to-end gradient --------------------------------------------------------

TEST(EndToEndTest, SampledGradCheckThroughLoss) {
  DepthNet net(desk_config(), 44);
  const std::vector<double> gt = random_values(45, 64 * 64, 1.0, 9.0);
  const std::vector<std::uint8_t> mask(64 * 64, 1);
  auto f = [&](Graph& g, const Tensor& x) {
    Tensor depth = net.forward(g, x);
    return silog_loss(g, depth, gt, mask, LossConfig{0.85});
  };
  const GradCheckReport rep = grad_check(
      f, {3, 64, 64}, random_values(46, 3 * 64 * 64, 0, 1), 1e-5, 1e-4, 48, 3);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

TEST(EndToEndTest, ForwardIsDeterministic) {
  const std::vector<double> img = random_values(47, 3 * 64 * 64, 0, 1);
  auto run = [&]() {
    DepthNet net(desk_config(), 48);
    Graph g;
    Tensor depth = net.forward(g, g.constant({3, 64, 64}, img));
    return std::vector<double>(depth.values().begin(), depth.values().end());
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}
