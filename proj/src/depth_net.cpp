#include "edgedepth/depth_net.hpp"

#include <cmath>

namespace edgedepth {

namespace {

void ensure(bool ok, const std::string& msg) {
  if (!ok) throw Error("internal invariant violated: " + msg);
}

// Keeps the head output strictly inside (0, 1) even for saturating logits.
constexpr double kHeadMargin = 1e-9;

// Edge-replicating spatial padding, realized as a gather so the adjoint is
// an exact scatter. Keeps constant inputs constant through the dilated
// branches, unlike zero padding.
Tensor replicate_pad2d(Graph& g, const Tensor& x, int pad) {
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(c) * ph * pw);
  std::size_t out = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = -pad; y < h + pad; ++y) {
      const int yy = std::min(std::max(y, 0), h - 1);
      for (int xx0 = -pad; xx0 < w + pad; ++xx0) {
        const int xx = std::min(std::max(xx0, 0), w - 1);
        idx[out++] = (static_cast<std::int64_t>(ch) * h + yy) * w + xx;
      }
    }
  }
  return g.gather(x, std::move(idx), {c, ph, pw});
}

}  // namespace

void ModelConfig::validate() const {
  if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("model: input extents must be positive multiples of 32, got " +
                      std::to_string(input_w) + "x" + std::to_string(input_h));
  }
  for (int w : enc_widths) {
    if (w < 1) throw ConfigError("model: encoder widths must be positive");
  }
  for (const PatchModuleConfig* pm : {&pem8, &pem16}) {
    if (pm->reduced_channels < 1 || pm->embed_dim < 1 || pm->out_channels < 1) {
      throw ConfigError("model: patch stage channel counts must be positive");
    }
  }
  // Both patch grids must resolve to the same (H/32)(W/32) patch count.
  const int np = n_patches();
  const int np8 = (input_h / 8 / pem8.patch_h) * (input_w / 8 / pem8.patch_w);
  const int np16 = (input_h / 16 / pem16.patch_h) * (input_w / 16 / pem16.patch_w);
  if ((input_h / 8) % pem8.patch_h != 0 || (input_w / 8) % pem8.patch_w != 0 ||
      (input_h / 16) % pem16.patch_h != 0 || (input_w / 16) % pem16.patch_w != 0) {
    throw ConfigError("model: patch sizes do not tile the encoder feature maps");
  }
  if (np8 != np16 || np8 != np) {
    throw ConfigError("model: patch counts disagree (" + std::to_string(np8) + " vs " +
                      std::to_string(np16) + ", expected " + std::to_string(np) + ")");
  }
  if (k < 1 || k > np - 1) {
    throw ConfigError("model: k = " + std::to_string(k) + " must be in [1, " +
                      std::to_string(np - 1) + "] for " + std::to_string(np) +
                      " patches");
  }
  if (concat_rows() % 2 != 0) {
    throw ConfigError("model: total attention channels " +
                      std::to_string(concat_rows()) + " must be even");
  }
  if (!(max_depth > 0.0)) {
    throw ConfigError("model: max_depth must be positive");
  }
  if (aspp_rates.empty()) {
    throw ConfigError("model: at least one dilation rate is required");
  }
  for (int r : aspp_rates) {
    if (r < 1) throw ConfigError("model: dilation rates must be >= 1");
  }
  if (decoder_channels < 1) {
    throw ConfigError("model: decoder_channels must be positive");
  }
  if (!(relu_slope > 0.0)) {
    throw ConfigError("model: relu_slope must be positive");
  }
}

// --- standalone stages ---------------------------------------------------------

Tensor self_attention(Graph& g, const Tensor& feat, const Tensor& key_w,
                      const Tensor& key_b, const Tensor& query_w, const Tensor& query_b,
                      const Tensor& value_w, const Tensor& value_b,
                      AttentionProbe* probe) {
  const Shape& s = feat.shape();
  if (s.size() != 2) {
    throw ShapeError("self_attention: expects c x n, got " + shape_str(s));
  }
  const int d = s[0];
  Tensor keys = linear_cols(g, key_w, key_b, feat);
  Tensor queries = linear_cols(g, query_w, query_b, feat);
  Tensor values = linear_cols(g, value_w, value_b, feat);
  // Rows of `scores` are queries (patches), columns are keys.
  Tensor scores = g.matmul(g.transpose(queries), keys);
  Tensor attn = g.softmax_lastdim(g.scale(scores, 1.0 / std::sqrt(static_cast<double>(d))));
  Tensor mixed = g.transpose(g.matmul(attn, g.transpose(values)));
  if (probe != nullptr) {
    probe->keys = keys;
    probe->queries = queries;
    probe->values = values;
    probe->attention = attn;
  }
  return g.add(feat, mixed);
}

Tensor aspp_forward(Graph& g, const Tensor& x, const AsppWeights& w,
                    const std::vector<int>& rates, double slope) {
  const Shape& s = x.shape();
  if (s.size() != 3) {
    throw ShapeError("aspp: expects c x h x w, got " + shape_str(s));
  }
  if (w.dilated.size() != rates.size()) {
    throw ConfigError("aspp: weight count does not match dilation rates");
  }
  std::vector<Tensor> branches;
  if (w.pointwise_w.valid()) {
    branches.push_back(g.conv2d(x, w.pointwise_w, &w.pointwise_b, {1, 0, 1}));
  }
  for (std::size_t i = 0; i < rates.size(); ++i) {
    Conv2dSpec spec;
    spec.stride = 1;
    spec.pad = 0;
    spec.dilation = rates[i];
    Tensor padded = replicate_pad2d(g, x, rates[i]);
    branches.push_back(g.conv2d(padded, w.dilated[i].first, &w.dilated[i].second, spec));
  }
  if (w.global_w.valid()) {
    Tensor pooled = g.reduce_mean(g.reduce_mean(x, 2), 1);      // (c)
    Tensor pooled_map = g.reshape(pooled, {s[0], 1, 1});
    Tensor squeezed = g.conv2d(pooled_map, w.global_w, &w.global_b, {1, 0, 1});
    branches.push_back(
        g.broadcast_to(squeezed, {squeezed.shape()[0], s[1], s[2]}));
  }
  Tensor merged = g.concat_channels(branches);
  Tensor fused = g.conv2d(merged, w.fuse_w, &w.fuse_b, {1, 0, 1});
  return g.leaky_relu(fused, slope);
}

Tensor decoder_forward(Graph& g, const Tensor& top, const Tensor& skip16,
                       const Tensor& skip8, const Tensor& skip4, const DecoderWeights& w,
                       int out_h, int out_w, double slope) {
  auto lateral = [&](const Tensor& skip, const Tensor& lw, const Tensor& lb) {
    return g.conv2d(skip, lw, &lb, {1, 0, 1});
  };
  auto level = [&](const Tensor& below, const Tensor& lat, const Tensor& sw,
                   const Tensor& sb) {
    Tensor up = g.upsample_bilinear(below, lat.shape()[1], lat.shape()[2]);
    Tensor merged = g.add(up, lat);
    return g.leaky_relu(g.conv2d(merged, sw, &sb, {1, 1, 1}), slope);
  };

  Tensor p16 = level(top, lateral(skip16, w.lat16_w, w.lat16_b), w.smooth16_w, w.smooth16_b);
  Tensor p8 = level(p16, lateral(skip8, w.lat8_w, w.lat8_b), w.smooth8_w, w.smooth8_b);
  Tensor p4 = level(p8, lateral(skip4, w.lat4_w, w.lat4_b), w.smooth4_w, w.smooth4_b);

  // Fuse all pyramid levels at 1/4 scale.
  const int h4 = p4.shape()[1], w4 = p4.shape()[2];
  const std::vector<Tensor> stack = {g.upsample_bilinear(p16, h4, w4),
                                     g.upsample_bilinear(p8, h4, w4), p4};
  Tensor merged = g.concat_channels(stack);
  Tensor logits = g.conv2d(merged, w.head_w, &w.head_b, {1, 1, 1});
  Tensor norm = g.clamp(g.sigmoid(logits), kHeadMargin, 1.0 - kHeadMargin);
  return g.upsample_bilinear(norm, out_h, out_w);
}

// --- DepthNet -------------------------------------------------------------------

DepthNet::DepthNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto& ew = cfg_.enc_widths;

  auto conv = [&](const std::string& name, int co, int ci, int kh, int kw) {
    params_.create(name + ".w", {co, ci, kh, kw}, ci * kh * kw, rng);
    params_.create_zeros(name + ".b", {co});
  };
  auto lin = [&](const std::string& name, int rows, int cols) {
    params_.create(name + ".w", {rows, cols}, cols, rng);
    params_.create_zeros(name + ".b", {rows});
  };

  conv("encoder.stem", ew[0], 3, 3, 3);
  const char* stages[4] = {"encoder.s4", "encoder.s8", "encoder.s16", "encoder.s32"};
  for (int i = 0; i < 4; ++i) {
    conv(std::string(stages[i]) + ".a", ew[i + 1], ew[i], 3, 3);
    conv(std::string(stages[i]) + ".b", ew[i + 1], ew[i + 1], 3, 3);
  }

  if (cfg_.use_patch_modules) {
    const PatchModuleConfig* pms[2] = {&cfg_.pem8, &cfg_.pem16};
    const int src_ch[2] = {ew[2], ew[3]};
    const char* names[2] = {"pem8", "pem16"};
    for (int i = 0; i < 2; ++i) {
      const PatchModuleConfig& pm = *pms[i];
      const std::string base = names[i];
      conv(base + ".reduce", pm.reduced_channels, src_ch[i], 1, 1);
      lin(base + ".embed", pm.embed_dim, pm.reduced_channels * pm.patch_h * pm.patch_w);
      lin(base + ".edge.theta", pm.out_channels, 2 * pm.embed_dim);
      lin(base + ".edge.mlp", pm.out_channels, pm.out_channels);
      lin(base + ".out_mlp", pm.out_channels, pm.out_channels);
    }
  }

  const int ct = cfg_.concat_rows();
  lin("eam.reduce", ct / 2, ct);
  lin("eam.edge.theta", ct / 2, ct);
  lin("eam.edge.mlp", ct / 2, ct / 2);
  lin("eam.key", ct, ct);
  lin("eam.query", ct, ct);
  lin("eam.value", ct, ct);

  const int cb = cfg_.decoder_channels;
  int branches = static_cast<int>(cfg_.aspp_rates.size());
  if (cfg_.aspp_pointwise) {
    conv("aspp.pointwise", cb, ct, 1, 1);
    ++branches;
  }
  for (int r : cfg_.aspp_rates) {
    conv("aspp.rate" + std::to_string(r), cb, ct, 3, 3);
  }
  if (cfg_.aspp_global) {
    conv("aspp.global", cb, ct, 1, 1);
    ++branches;
  }
  conv("aspp.fuse", cb, branches * cb, 1, 1);

  conv("decoder.lat16", cb, ew[3], 1, 1);
  conv("decoder.lat8", cb, ew[2], 1, 1);
  conv("decoder.lat4", cb, ew[1], 1, 1);
  conv("decoder.p16", cb, cb, 3, 3);
  conv("decoder.p8", cb, cb, 3, 3);
  conv("decoder.p4", cb, cb, 3, 3);
  conv("decoder.head", 1, 3 * cb, 3, 3);
}

Tensor DepthNet::p(Graph& g, const std::string& name) {
  return g.param(params_.at(name));
}

std::array<Tensor, 4> DepthNet::encoder_forward(Graph& g, const Tensor& image) {
  const Shape& s = image.shape();
  if (s != Shape{3, cfg_.input_h, cfg_.input_w}) {
    throw ShapeError("encoder: expected image [3x" + std::to_string(cfg_.input_h) + "x" +
                     std::to_string(cfg_.input_w) + "], got " + shape_str(s));
  }
  const double slope = cfg_.relu_slope;
  Tensor stem_b = p(g, "encoder.stem.b");
  Tensor x = g.leaky_relu(g.conv2d(image, p(g, "encoder.stem.w"), &stem_b, {2, 1, 1}), slope);
  std::array<Tensor, 4> maps;
  const char* stages[4] = {"encoder.s4", "encoder.s8", "encoder.s16", "encoder.s32"};
  for (int i = 0; i < 4; ++i) {
    const std::string base = stages[i];
    Tensor ab = p(g, base + ".a.b");
    x = g.leaky_relu(g.conv2d(x, p(g, base + ".a.w"), &ab, {2, 1, 1}), slope);
    Tensor bb = p(g, base + ".b.b");
    x = g.leaky_relu(g.conv2d(x, p(g, base + ".b.w"), &bb, {1, 1, 1}), slope);
    maps[static_cast<std::size_t>(i)] = x;
  }
  return maps;
}

EdgeFeatureMapResult DepthNet::pem_forward(Graph& g, const Tensor& fmap, int which) {
  if (!cfg_.use_patch_modules) {
    throw ConfigError("pem_forward: patch stages are disabled in this configuration");
  }
  const PatchModuleConfig& pm = which == 0 ? cfg_.pem8 : cfg_.pem16;
  const std::string base = which == 0 ? "pem8" : "pem16";
  const double slope = cfg_.relu_slope;

  Tensor rb = p(g, base + ".reduce.b");
  Tensor reduced = g.conv2d(fmap, p(g, base + ".reduce.w"), &rb, {1, 0, 1});
  PatchEmbedConfig pc{pm.patch_w, pm.patch_h, pm.reduced_channels, pm.embed_dim};
  EmbeddedPatches embedded =
      patch_embed(g, reduced, pc, p(g, base + ".embed.w"), p(g, base + ".embed.b"));
  Tensor em = edge_conv_block(g, embedded.values, cfg_.k, p(g, base + ".edge.theta.w"),
                              p(g, base + ".edge.theta.b"), p(g, base + ".edge.mlp.w"),
                              p(g, base + ".edge.mlp.b"), slope);
  Tensor features =
      channel_mlp(g, p(g, base + ".out_mlp.w"), p(g, base + ".out_mlp.b"), em, slope);
  return {features, embedded.n_patches};
}

Tensor DepthNet::forward(Graph& g, const Tensor& image, EamState* state) {
  const double slope = cfg_.relu_slope;
  const int np = cfg_.n_patches();
  const int ct = cfg_.concat_rows();
  const int h32 = cfg_.input_h / 32;
  const int w32 = cfg_.input_w / 32;

  std::array<Tensor, 4> feats = encoder_forward(g, image);
  Tensor global_flat = g.reshape(feats[3], {cfg_.global_channels(), np});

  Tensor concat_input;
  if (cfg_.use_patch_modules) {
    EdgeFeatureMapResult e8 = pem_forward(g, feats[1], 0);
    EdgeFeatureMapResult e16 = pem_forward(g, feats[2], 1);
    if (e8.n_patches != e16.n_patches || e8.n_patches != np) {
      throw ConfigError("forward: patch stages produced " + std::to_string(e8.n_patches) +
                        " and " + std::to_string(e16.n_patches) + " patches, expected " +
                        std::to_string(np));
    }
    const std::vector<Tensor> parts = {global_flat, e8.features, e16.features};
    concat_input = g.concat_channels(parts);
  } else {
    concat_input = global_flat;
  }
  ensure(concat_input.shape()[0] == ct, "attention input channel count");

  if (ct % 2 != 0) {
    throw ConfigError("forward: attention channel count must be even");
  }
  Tensor reduced =
      channel_mlp(g, p(g, "eam.reduce.w"), p(g, "eam.reduce.b"), concat_input, slope);
  Tensor em = edge_conv_block(g, reduced, cfg_.k, p(g, "eam.edge.theta.w"),
                              p(g, "eam.edge.theta.b"), p(g, "eam.edge.mlp.w"),
                              p(g, "eam.edge.mlp.b"), slope);
  const std::vector<Tensor> stack_parts = {reduced, em};
  Tensor edge_stack = g.concat_channels(stack_parts);
  ensure(edge_stack.shape()[0] == ct, "edge stack channel count");

  AttentionProbe probe;
  Tensor attended =
      self_attention(g, edge_stack, p(g, "eam.key.w"), p(g, "eam.key.b"),
                     p(g, "eam.query.w"), p(g, "eam.query.b"), p(g, "eam.value.w"),
                     p(g, "eam.value.b"), &probe);
  ensure(attended.shape()[0] == ct, "attended channel count");

  Tensor spatial = g.reshape(attended, {ct, h32, w32});

  AsppWeights aw;
  if (cfg_.aspp_pointwise) {
    aw.pointwise_w = p(g, "aspp.pointwise.w");
    aw.pointwise_b = p(g, "aspp.pointwise.b");
  }
  for (int r : cfg_.aspp_rates) {
    aw.dilated.emplace_back(p(g, "aspp.rate" + std::to_string(r) + ".w"),
                            p(g, "aspp.rate" + std::to_string(r) + ".b"));
  }
  if (cfg_.aspp_global) {
    aw.global_w = p(g, "aspp.global.w");
    aw.global_b = p(g, "aspp.global.b");
  }
  aw.fuse_w = p(g, "aspp.fuse.w");
  aw.fuse_b = p(g, "aspp.fuse.b");
  Tensor aspp_out = aspp_forward(g, spatial, aw, cfg_.aspp_rates, slope);

  DecoderWeights dw;
  dw.lat16_w = p(g, "decoder.lat16.w");
  dw.lat16_b = p(g, "decoder.lat16.b");
  dw.lat8_w = p(g, "decoder.lat8.w");
  dw.lat8_b = p(g, "decoder.lat8.b");
  dw.lat4_w = p(g, "decoder.lat4.w");
  dw.lat4_b = p(g, "decoder.lat4.b");
  dw.smooth16_w = p(g, "decoder.p16.w");
  dw.smooth16_b = p(g, "decoder.p16.b");
  dw.smooth8_w = p(g, "decoder.p8.w");
  dw.smooth8_b = p(g, "decoder.p8.b");
  dw.smooth4_w = p(g, "decoder.p4.w");
  dw.smooth4_b = p(g, "decoder.p4.b");
  dw.head_w = p(g, "decoder.head.w");
  dw.head_b = p(g, "decoder.head.b");
  Tensor norm = decoder_forward(g, aspp_out, feats[2], feats[1], feats[0], dw,
                                cfg_.input_h, cfg_.input_w, slope);

  if (state != nullptr) {
    state->concat_input = concat_input;
    state->reduced = reduced;
    state->edge_stack = edge_stack;
    state->keys = probe.keys;
    state->queries = probe.queries;
    state->values = probe.values;
    state->attention = probe.attention;
    state->attended = attended;
    state->output = aspp_out;
  }
  return g.scale(norm, cfg_.max_depth);
}

}  // namespace edgedepth
