#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "edgedepth/params.hpp"
#include "edgedepth/patch_graph.hpp"
#include "edgedepth/tensor.hpp"

namespace edgedepth {

// One patch-wise edge-convolution stage tapping an encoder scale.
struct PatchModuleConfig {
  int reduced_channels = 12;  // channels after the 1x1 reduction conv
  int embed_dim = 12;
  int out_channels = 12;
  int patch_w = 4;
  int patch_h = 4;
};

struct ModelConfig {
  int input_h = 64;
  int input_w = 64;
  // Encoder widths at strides 1/2, 1/4, 1/8, 1/16, 1/32; the last one is
  // the channel count of the flattened global feature.
  std::array<int, 5> enc_widths = {4, 8, 16, 24, 48};
  PatchModuleConfig pem8 = {12, 12, 12, 4, 4};
  PatchModuleConfig pem16 = {12, 12, 12, 2, 2};
  int k = 3;  // neighbors in every EdgeConv graph
  double max_depth = 10.0;
  std::vector<int> aspp_rates = {1, 2, 3};
  bool aspp_pointwise = true;
  bool aspp_global = true;
  int decoder_channels = 24;
  bool use_patch_modules = true;  // false drops both patch stages (ablation)
  double relu_slope = 0.2;

  int n_patches() const { return (input_h / 32) * (input_w / 32); }
  int global_channels() const { return enc_widths[4]; }
  // Total attention-stage channels: global + both patch-stage outputs.
  int concat_rows() const {
    return global_channels() +
           (use_patch_modules ? pem8.out_channels + pem16.out_channels : 0);
  }
  void validate() const;  // throws ConfigError
};

// Intermediate attention-stage tensors, exposed for inspection and tests.
struct EamState {
  Tensor concat_input;  // concat_rows x n_patches
  Tensor reduced;       // concat_rows/2 x n_patches
  Tensor edge_stack;    // concat_rows x n_patches
  Tensor keys, queries, values;
  Tensor attention;     // n_patches x n_patches, rows sum to 1
  Tensor attended;      // concat_rows x n_patches
  Tensor output;        // decoder_channels x h/32 x w/32
};

// --- standalone stages (weights passed explicitly) ---------------------------

struct AttentionProbe {
  Tensor keys, queries, values;  // c x n projections
  Tensor attention;              // n x n, rows sum to 1
};

// Residual scaled dot-product attention over patch columns: the input is
// c x n with one column per patch; returns input + attention(values).
Tensor self_attention(Graph& g, const Tensor& feat, const Tensor& key_w,
                      const Tensor& key_b, const Tensor& query_w, const Tensor& query_b,
                      const Tensor& value_w, const Tensor& value_b,
                      AttentionProbe* probe = nullptr);

struct AsppWeights {
  Tensor pointwise_w, pointwise_b;                  // 1x1 branch (optional)
  std::vector<std::pair<Tensor, Tensor>> dilated;   // 3x3 conv per rate
  Tensor global_w, global_b;                        // 1x1 on the pooled vector (optional)
  Tensor fuse_w, fuse_b;                            // 1x1 fuse to decoder width
};

// Parallel dilated branches plus optional pointwise and global-average
// branches, concatenated and fused; activation only after the fuse conv.
Tensor aspp_forward(Graph& g, const Tensor& x, const AsppWeights& w,
                    const std::vector<int>& rates, double slope);

struct DecoderWeights {
  Tensor lat16_w, lat16_b, lat8_w, lat8_b, lat4_w, lat4_b;  // 1x1 laterals
  Tensor smooth16_w, smooth16_b, smooth8_w, smooth8_b, smooth4_w, smooth4_b;
  Tensor head_w, head_b;  // 3x3 to one channel
};

// FPN top-down pathway from the 1/32 map; emits the normalized depth map
// 1 x out_h x out_w with every value strictly inside (0, 1).
Tensor decoder_forward(Graph& g, const Tensor& top, const Tensor& skip16,
                       const Tensor& skip8, const Tensor& skip4, const DecoderWeights& w,
                       int out_h, int out_w, double slope);

// --- full model ---------------------------------------------------------------

// Per-patch edge feature map produced by one patch stage.
struct EdgeFeatureMapResult {
  Tensor features;  // out_channels x n_patches
  int n_patches = 0;
};

class DepthNet {
 public:
  DepthNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Feature maps at strides 1/4, 1/8, 1/16, 1/32.
  std::array<Tensor, 4> encoder_forward(Graph& g, const Tensor& image);

  // Patch stage on the 1/8 (which = 0) or 1/16 (which = 1) encoder map.
  EdgeFeatureMapResult pem_forward(Graph& g, const Tensor& fmap, int which);

  // Depth in meters, 1 x H x W, every value in (0, max_depth).
  Tensor forward(Graph& g, const Tensor& image, EamState* state = nullptr);

 private:
  Tensor p(Graph& g, const std::string& name);

  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace edgedepth
