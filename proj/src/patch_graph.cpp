#include "edgedepth/patch_graph.hpp"

#include <algorithm>
#include <array>

namespace edgedepth {

std::vector<std::int64_t> patch_gather_indices(const Shape& fmap_shape,
                                               const PatchEmbedConfig& cfg) {
  if (fmap_shape.size() != 3) {
    throw ShapeError("patch_embed: feature map must be c*h*w, got " +
                     shape_str(fmap_shape));
  }
  const int c = fmap_shape[0], h = fmap_shape[1], w = fmap_shape[2];
  if (c != cfg.in_channels) {
    throw ShapeError("patch_embed: feature map " + shape_str(fmap_shape) + " has " +
                     std::to_string(c) + " channels, config expects " +
                     std::to_string(cfg.in_channels));
  }
  if (cfg.patch_h < 1 || cfg.patch_w < 1 || h % cfg.patch_h != 0 || w % cfg.patch_w != 0) {
    throw ShapeError("patch_embed: extents " + shape_str(fmap_shape) +
                     " are not multiples of patch " + std::to_string(cfg.patch_w) + "x" +
                     std::to_string(cfg.patch_h));
  }
  const int cols = w / cfg.patch_w;
  const int rows = h / cfg.patch_h;
  const int n_patches = cols * rows;
  const int patch_len = c * cfg.patch_h * cfg.patch_w;

  // Output layout: (patch_len, n_patches); element (d, i) reads channel-first
  // row-major position d of patch i.
  std::vector<std::int64_t> idx(static_cast<std::size_t>(patch_len) * n_patches);
  for (int ch = 0; ch < c; ++ch) {
    for (int py = 0; py < cfg.patch_h; ++py) {
      for (int px = 0; px < cfg.patch_w; ++px) {
        const int d = (ch * cfg.patch_h + py) * cfg.patch_w + px;
        for (int gy = 0; gy < rows; ++gy) {
          for (int gx = 0; gx < cols; ++gx) {
            const int patch = gy * cols + gx;
            const std::int64_t src =
                (static_cast<std::int64_t>(ch) * h + (gy * cfg.patch_h + py)) * w +
                (gx * cfg.patch_w + px);
            idx[static_cast<std::size_t>(d) * n_patches + patch] = src;
          }
        }
      }
    }
  }
  return idx;
}

EmbeddedPatches patch_embed(Graph& g, const Tensor& fmap, const PatchEmbedConfig& cfg,
                            const Tensor& proj_w, const Tensor& proj_b) {
  const Shape& s = fmap.shape();
  std::vector<std::int64_t> idx = patch_gather_indices(s, cfg);
  const int cols = s[2] / cfg.patch_w;
  const int rows = s[1] / cfg.patch_h;
  const int n_patches = cols * rows;
  const int patch_len = cfg.in_channels * cfg.patch_h * cfg.patch_w;
  if (proj_w.shape() != Shape{cfg.embed_dim, patch_len}) {
    throw ShapeError("patch_embed: projection weight " + shape_str(proj_w.shape()) +
                     " does not map " + std::to_string(patch_len) + " -> " +
                     std::to_string(cfg.embed_dim));
  }
  Tensor patches = g.gather(fmap, std::move(idx), {patch_len, n_patches});
  EmbeddedPatches out;
  out.values = linear_cols(g, proj_w, proj_b, patches);
  out.n_patches = n_patches;
  out.grid = {cols, rows};
  return out;
}

NeighborIndex knn_graph_values(std::span<const double> values, int channels, int n,
                               int k) {
  if (n < 2) {
    throw ConfigError("knn_graph: need at least 2 patches");
  }
  if (k < 1 || k >= n) {
    throw ConfigError("knn_graph: k = " + std::to_string(k) +
                      " must satisfy 1 <= k <= n_patches - 1 with n_patches = " +
                      std::to_string(n));
  }
  NeighborIndex out;
  out.n_patches = n;
  out.k = k;
  out.indices.resize(static_cast<std::size_t>(n) * k);

  std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double diff = values[static_cast<std::size_t>(c) * n + i] -
                            values[static_cast<std::size_t>(c) * n + j];
        d2 += diff * diff;
      }
      cand[m++] = {d2, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int m2 = 0; m2 < k; ++m2) {
      out.indices[static_cast<std::size_t>(i) * k + m2] = cand[static_cast<std::size_t>(m2)].second;
    }
  }
  return out;
}

NeighborIndex knn_graph(const EmbeddedPatches& patches, int k) {
  const Shape& s = patches.values.shape();
  return knn_graph_values(patches.values.values(), s[0], s[1], k);
}

Tensor edge_features(Graph& g, const Tensor& x, const NeighborIndex& nbrs,
                     const Tensor& theta_w, const Tensor& theta_b, double slope) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[1] != nbrs.n_patches) {
    throw ShapeError("edge_features: input " + shape_str(s) + " does not match " +
                     std::to_string(nbrs.n_patches) + " patches");
  }
  const int c_in = s[0];
  const int n = s[1];
  const int k = nbrs.k;
  if (theta_w.shape().size() != 2 || theta_w.shape()[1] != 2 * c_in) {
    throw ShapeError("edge_features: theta weight " + shape_str(theta_w.shape()) +
                     " must have " + std::to_string(2 * c_in) + " input columns");
  }
  const int c_out = theta_w.shape()[0];

  // Column order (m, i) = m * n + i for both the tiled centers and the
  // gathered neighbors, so one matmul covers all edges.
  std::vector<std::int64_t> center_idx(static_cast<std::size_t>(c_in) * k * n);
  std::vector<std::int64_t> nbr_idx(center_idx.size());
  for (int c = 0; c < c_in; ++c) {
    for (int m = 0; m < k; ++m) {
      for (int i = 0; i < n; ++i) {
        const std::size_t dst = (static_cast<std::size_t>(c) * k + m) * n + i;
        center_idx[dst] = static_cast<std::int64_t>(c) * n + i;
        nbr_idx[dst] = static_cast<std::int64_t>(c) * n + nbrs.at(i, m);
      }
    }
  }
  const Shape wide{c_in, k * n};
  Tensor centers = g.gather(x, std::move(center_idx), wide);
  Tensor neighbors = g.gather(x, std::move(nbr_idx), wide);
  Tensor offsets = g.sub(neighbors, centers);
  const std::array<Tensor, 2> pair = {centers, offsets};
  Tensor stacked = g.concat_channels(pair);  // 2c_in x (k*n)
  Tensor pre = linear_cols(g, theta_w, theta_b, stacked);
  Tensor act = g.leaky_relu(pre, slope);
  // (c_out, k, n) -> (k, c_out, n)
  Tensor cube = g.reshape(act, {c_out, k, n});
  return g.permute(cube, {1, 0, 2});
}

Tensor edge_aggregate(Graph& g, const Tensor& edges) {
  if (edges.shape().size() != 3) {
    throw ShapeError("edge_aggregate: expects k x c x n, got " +
                     shape_str(edges.shape()));
  }
  return g.reduce_max(edges, 0);
}

Tensor linear_cols(Graph& g, const Tensor& w, const Tensor& b, const Tensor& x) {
  Tensor y = g.matmul(w, x);
  Tensor bias_col = g.reshape(b, {b.shape()[0], 1});
  return g.add(y, g.broadcast_to(bias_col, y.shape()));
}

Tensor channel_mlp(Graph& g, const Tensor& w, const Tensor& b, const Tensor& x,
                   double slope) {
  return g.leaky_relu(linear_cols(g, w, b, x), slope);
}

Tensor edge_conv_block(Graph& g, const Tensor& x, int k, const Tensor& theta_w,
                       const Tensor& theta_b, const Tensor& mlp_w, const Tensor& mlp_b,
                       double slope) {
  const Shape& s = x.shape();
  if (s.size() != 2) {
    throw ShapeError("edge_conv_block: expects c x n, got " + shape_str(s));
  }
  // The graph is rebuilt from the current column values on every call, so
  // it tracks the embedding as training moves it.
  NeighborIndex nbrs = knn_graph_values(x.values(), s[0], s[1], k);
  Tensor edges = edge_features(g, x, nbrs, theta_w, theta_b, slope);
  Tensor agg = edge_aggregate(g, edges);
  return channel_mlp(g, mlp_w, mlp_b, agg, slope);
}

}  // namespace edgedepth
