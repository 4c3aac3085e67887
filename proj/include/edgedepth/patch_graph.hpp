#pragma once

#include <span>
#include <vector>

#include "edgedepth/tensor.hpp"

namespace edgedepth {

// Patch extraction geometry for one feature map scale.
struct PatchEmbedConfig {
  int patch_w = 4;
  int patch_h = 4;
  int in_channels = 0;  // channels of the feature map being embedded
  int embed_dim = 0;    // length of each embedded patch vector
};

struct PatchGrid {
  int cols = 0;
  int rows = 0;
};

// Column i holds the embedding of patch i; patches are ordered row-major
// over the grid.
struct EmbeddedPatches {
  Tensor values;  // embed_dim x n_patches
  int n_patches = 0;
  PatchGrid grid;
};

// k nearest feature-space neighbors per patch; row i never contains i,
// never contains duplicates, and is sorted by (squared distance, id).
struct NeighborIndex {
  int n_patches = 0;
  int k = 0;
  std::vector<int> indices;  // n_patches x k, row-major

  int at(int patch, int m) const { return indices[static_cast<std::size_t>(patch) * k + m]; }
};

// Flat indices that gather the (in_channels*patch_h*patch_w) x n_patches
// patch matrix out of a row-major c*h*w feature map. Each patch is
// flattened channel-first.
std::vector<std::int64_t> patch_gather_indices(const Shape& fmap_shape,
                                               const PatchEmbedConfig& cfg);

// One shared linear map from flattened patches to embedding columns.
EmbeddedPatches patch_embed(Graph& g, const Tensor& fmap, const PatchEmbedConfig& cfg,
                            const Tensor& proj_w, const Tensor& proj_b);

// Exact k-NN under squared Euclidean distance over the columns of a
// channels x n matrix; ties break toward the lower patch id.
NeighborIndex knn_graph_values(std::span<const double> values, int channels, int n, int k);
NeighborIndex knn_graph(const EmbeddedPatches& patches, int k);

// Per-edge features h_theta([e_i ; e_j - e_i]) for every neighbor slot,
// arranged as k x out_channels x n_patches.
Tensor edge_features(Graph& g, const Tensor& x, const NeighborIndex& nbrs,
                     const Tensor& theta_w, const Tensor& theta_b, double slope);

// Maximum over the neighbor axis of a k x c x n tensor.
Tensor edge_aggregate(Graph& g, const Tensor& edges);

// Per-column linear map y = W x + b.
Tensor linear_cols(Graph& g, const Tensor& w, const Tensor& b, const Tensor& x);

// linear_cols followed by the module nonlinearity.
Tensor channel_mlp(Graph& g, const Tensor& w, const Tensor& b, const Tensor& x,
                   double slope);

// The reusable EdgeConv block: k-NN graph on the current column values,
// edge features, neighbor max, then a channel-wise MLP.
Tensor edge_conv_block(Graph& g, const Tensor& x, int k, const Tensor& theta_w,
                       const Tensor& theta_b, const Tensor& mlp_w, const Tensor& mlp_b,
                       double slope);

}  // namespace edgedepth
