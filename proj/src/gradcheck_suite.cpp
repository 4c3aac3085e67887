#include <array>
#include <cmath>
#include <memory>

#include "edgedepth/data_io.hpp"
#include "edgedepth/depth_net.hpp"
#include "edgedepth/gradcheck.hpp"
#include "edgedepth/loss_metrics.hpp"
#include "edgedepth/run_config.hpp"

namespace edgedepth {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

std::vector<double> uniform_values(Rng& rng, std::int64_t n, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero so kinked activations stay off their kinks.
std::vector<double> signed_values(Rng& rng, std::int64_t n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) {
    const double mag = rng.uniform(0.1, 1.0);
    x = rng.bernoulli(0.5) ? mag : -mag;
  }
  return v;
}

// Reduces any output to a scalar with distinct per-element weights so that
// every coordinate contributes its own signal.
Tensor weighted_sum(Graph& g, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = g.constant(y.shape(), uniform_values(rng, y.numel(), -1.0, 1.0));
  return g.reduce_sum_all(g.mul(y, w));
}

GradCheckCase unary_case(const std::string& name, Shape shape, bool positive,
                         const std::function<Tensor(Graph&, const Tensor&)>& op) {
  const std::string desc = shape_str(shape);
  return {name, desc, [=]() {
            Rng rng(0xabc0 + shape[0]);
            std::vector<double> x0 = positive
                                         ? uniform_values(rng, shape_numel(shape), 0.5, 2.0)
                                         : signed_values(rng, shape_numel(shape));
            auto f = [&op](Graph& g, const Tensor& x) {
              return weighted_sum(g, op(g, x), 17);
            };
            return grad_check(f, shape, x0, kEps, kTol);
          }};
}

std::vector<GradCheckCase> primitive_cases() {
  std::vector<GradCheckCase> cases;

  cases.push_back(unary_case("primitive.add", {3, 4}, false, [](Graph& g, const Tensor& x) {
    Rng rng(21);
    Tensor other = g.constant(x.shape(), uniform_values(rng, x.numel(), -1.0, 1.0));
    return g.add(x, other);
  }));
  cases.push_back(unary_case("primitive.sub", {3, 4}, false, [](Graph& g, const Tensor& x) {
    Rng rng(22);
    Tensor other = g.constant(x.shape(), uniform_values(rng, x.numel(), -1.0, 1.0));
    return g.sub(other, x);
  }));
  cases.push_back(unary_case("primitive.mul", {3, 4}, false, [](Graph& g, const Tensor& x) {
    Rng rng(23);
    Tensor other = g.constant(x.shape(), uniform_values(rng, x.numel(), 0.5, 1.5));
    return g.mul(x, other);
  }));
  cases.push_back(unary_case("primitive.matmul.lhs", {4, 5}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(24);
                               Tensor rhs = g.constant({5, 3}, uniform_values(rng, 15, -1, 1));
                               return g.matmul(x, rhs);
                             }));
  cases.push_back(unary_case("primitive.matmul.rhs", {5, 3}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(25);
                               Tensor lhs = g.constant({4, 5}, uniform_values(rng, 20, -1, 1));
                               return g.matmul(lhs, x);
                             }));
  cases.push_back(unary_case("primitive.concat_channels", {3, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(26);
                               Tensor other = g.constant({2, 4}, uniform_values(rng, 8, -1, 1));
                               const std::array<Tensor, 3> parts = {other, x, other};
                               return g.concat_channels(parts);
                             }));
  cases.push_back(unary_case("primitive.reshape", {2, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.reshape(x, {3, 2, 2});
                             }));
  cases.push_back(unary_case("primitive.transpose", {3, 5}, false,
                             [](Graph& g, const Tensor& x) { return g.transpose(x); }));
  cases.push_back(unary_case("primitive.permute", {2, 3, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.permute(x, {2, 0, 1});
                             }));
  cases.push_back(unary_case("primitive.leaky_relu", {4, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.leaky_relu(x, 0.2);
                             }));
  cases.push_back(unary_case("primitive.sigmoid", {4, 6}, false,
                             [](Graph& g, const Tensor& x) { return g.sigmoid(x); }));
  cases.push_back(unary_case("primitive.log", {4, 6}, true,
                             [](Graph& g, const Tensor& x) { return g.log(x); }));
  cases.push_back(unary_case("primitive.sqrt", {4, 6}, true,
                             [](Graph& g, const Tensor& x) { return g.sqrt(x); }));
  cases.push_back(unary_case("primitive.scale", {4, 6}, false,
                             [](Graph& g, const Tensor& x) { return g.scale(x, -1.7); }));
  cases.push_back(unary_case("primitive.add_scalar", {4, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.add_scalar(x, 0.37);
                             }));
  cases.push_back(unary_case("primitive.clamp", {4, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               // x is drawn away from 0; clamp cuts at 0.5.
                               return g.clamp(x, -0.5, 0.5);
                             }));
  cases.push_back(unary_case("primitive.reduce_max", {3, 7}, false,
                             [](Graph& g, const Tensor& x) { return g.reduce_max(x, 1); }));
  cases.push_back(unary_case("primitive.reduce_mean", {3, 7}, false,
                             [](Graph& g, const Tensor& x) { return g.reduce_mean(x, 0); }));
  cases.push_back(unary_case("primitive.reduce_sum", {2, 3, 4}, false,
                             [](Graph& g, const Tensor& x) { return g.reduce_sum(x, 1); }));
  cases.push_back(unary_case("primitive.broadcast", {3, 1}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.broadcast_to(x, {2, 3, 5});
                             }));
  cases.push_back(unary_case("primitive.gather", {3, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               // Repeated indices exercise grad accumulation.
                               return g.gather(x, {0, 5, 5, 11, 3, 7}, {2, 3});
                             }));
  cases.push_back(unary_case("primitive.softmax_lastdim", {3, 5}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.softmax_lastdim(x);
                             }));

  cases.push_back(unary_case("primitive.conv2d.input", {2, 6, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(27);
                               Tensor w = g.constant({3, 2, 3, 3}, uniform_values(rng, 54, -1, 1));
                               Tensor b = g.constant({3}, uniform_values(rng, 3, -1, 1));
                               return g.conv2d(x, w, &b, {1, 1, 1});
                             }));
  cases.push_back(unary_case("primitive.conv2d.weight", {3, 2, 3, 3}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(28);
                               Tensor in = g.constant({2, 6, 6}, uniform_values(rng, 72, -1, 1));
                               Tensor b = g.constant({3}, uniform_values(rng, 3, -1, 1));
                               return g.conv2d(in, x, &b, {1, 1, 1});
                             }));
  cases.push_back(unary_case("primitive.conv2d.bias", {3}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(29);
                               Tensor in = g.constant({2, 5, 5}, uniform_values(rng, 50, -1, 1));
                               Tensor w = g.constant({3, 2, 3, 3}, uniform_values(rng, 54, -1, 1));
                               return g.conv2d(in, w, &x, {2, 1, 1});
                             }));
  cases.push_back(unary_case("primitive.conv2d.strided_dilated", {2, 8, 8}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(30);
                               Tensor w = g.constant({2, 2, 3, 3}, uniform_values(rng, 36, -1, 1));
                               Tensor b = g.constant({2}, uniform_values(rng, 2, -1, 1));
                               return g.conv2d(x, w, &b, {2, 2, 2});
                             }));
  cases.push_back(unary_case("primitive.upsample_bilinear.up", {2, 3, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.upsample_bilinear(x, 7, 6);
                             }));
  cases.push_back(unary_case("primitive.upsample_bilinear.down", {2, 6, 8}, false,
                             [](Graph& g, const Tensor& x) {
                               return g.upsample_bilinear(x, 3, 4);
                             }));
  return cases;
}

std::vector<GradCheckCase> module_cases() {
  std::vector<GradCheckCase> cases;

  cases.push_back(unary_case("module.em_forward", {3, 6}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(31);
                               Tensor tw = g.constant({4, 6}, uniform_values(rng, 24, -1, 1));
                               Tensor tb = g.constant({4}, uniform_values(rng, 4, -0.2, 0.2));
                               Tensor mw = g.constant({5, 4}, uniform_values(rng, 20, -1, 1));
                               Tensor mb = g.constant({5}, uniform_values(rng, 5, -0.2, 0.2));
                               return edge_conv_block(g, x, 2, tw, tb, mw, mb, 0.2);
                             }));

  cases.push_back(unary_case("module.sam_forward", {4, 5}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(32);
                               auto mk = [&](int r, int c) {
                                 return g.constant({r, c}, uniform_values(rng, r * c, -0.7, 0.7));
                               };
                               auto mkb = [&](int r) {
                                 return g.constant({r}, uniform_values(rng, r, -0.2, 0.2));
                               };
                               Tensor kw = mk(4, 4), qw = mk(4, 4), vw = mk(4, 4);
                               Tensor kb = mkb(4), qb = mkb(4), vb = mkb(4);
                               return self_attention(g, x, kw, kb, qw, qb, vw, vb);
                             }));

  cases.push_back(unary_case("module.patch_embed", {2, 4, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(33);
                               PatchEmbedConfig pc{2, 2, 2, 3};
                               Tensor pw = g.constant({3, 8}, uniform_values(rng, 24, -1, 1));
                               Tensor pb = g.constant({3}, uniform_values(rng, 3, -0.2, 0.2));
                               return patch_embed(g, x, pc, pw, pb).values;
                             }));

  cases.push_back(unary_case("module.aspp_forward", {3, 4, 4}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(34);
                               AsppWeights w;
                               auto conv = [&](int co, int ci, int k) {
                                 Tensor cw = g.constant({co, ci, k, k},
                                                        uniform_values(rng, static_cast<std::int64_t>(co) * ci * k * k, -0.6, 0.6));
                                 Tensor cb = g.constant({co}, uniform_values(rng, co, -0.2, 0.2));
                                 return std::pair<Tensor, Tensor>(cw, cb);
                               };
                               auto [pw, pb] = conv(2, 3, 1);
                               w.pointwise_w = pw;
                               w.pointwise_b = pb;
                               w.dilated.push_back(conv(2, 3, 3));
                               w.dilated.push_back(conv(2, 3, 3));
                               auto [gw, gb] = conv(2, 3, 1);
                               w.global_w = gw;
                               w.global_b = gb;
                               auto [fw, fb] = conv(3, 8, 1);
                               w.fuse_w = fw;
                               w.fuse_b = fb;
                               return aspp_forward(g, x, w, {1, 2}, 0.2);
                             }));

  cases.push_back(unary_case("module.decoder_forward", {4, 2, 2}, false,
                             [](Graph& g, const Tensor& x) {
                               Rng rng(35);
                               auto conv = [&](int co, int ci, int k) {
                                 Tensor cw = g.constant({co, ci, k, k},
                                                        uniform_values(rng, static_cast<std::int64_t>(co) * ci * k * k, -0.5, 0.5));
                                 Tensor cb = g.constant({co}, uniform_values(rng, co, -0.2, 0.2));
                                 return std::pair<Tensor, Tensor>(cw, cb);
                               };
                               DecoderWeights w;
                               std::tie(w.lat16_w, w.lat16_b) = conv(4, 3, 1);
                               std::tie(w.lat8_w, w.lat8_b) = conv(4, 3, 1);
                               std::tie(w.lat4_w, w.lat4_b) = conv(4, 3, 1);
                               std::tie(w.smooth16_w, w.smooth16_b) = conv(4, 4, 3);
                               std::tie(w.smooth8_w, w.smooth8_b) = conv(4, 4, 3);
                               std::tie(w.smooth4_w, w.smooth4_b) = conv(4, 4, 3);
                               std::tie(w.head_w, w.head_b) = conv(1, 12, 3);
                               Tensor s16 = g.constant({3, 4, 4}, uniform_values(rng, 48, -1, 1));
                               Tensor s8 = g.constant({3, 8, 8}, uniform_values(rng, 192, -1, 1));
                               Tensor s4 = g.constant({3, 16, 16}, uniform_values(rng, 768, -1, 1));
                               return decoder_forward(g, x, s16, s8, s4, w, 64, 64, 0.2);
                             }));

  cases.push_back({"module.silog", "[6x6]", []() {
                     Rng rng(36);
                     const Shape shape{6, 6};
                     std::vector<double> pred = uniform_values(rng, 36, 0.5, 8.0);
                     std::vector<double> gt = uniform_values(rng, 36, 0.5, 8.0);
                     std::vector<std::uint8_t> mask(36, 1);
                     mask[3] = mask[17] = mask[30] = 0;  // a few invalid pixels
                     auto f = [&](Graph& g, const Tensor& x) {
                       return silog_loss(g, x, gt, mask, LossConfig{0.85});
                     };
                     return grad_check(f, shape, pred, kEps, 1e-6);
                   }});

  cases.push_back({"module.silog_two_layer_net", "[2x4x4]", []() {
                     Rng rng(37);
                     const Shape shape{2, 4, 4};
                     std::vector<double> x0 = uniform_values(rng, 32, -1.0, 1.0);
                     std::vector<double> gt = uniform_values(rng, 16, 1.0, 9.0);
                     std::vector<std::uint8_t> mask(16, 1);
                     std::vector<double> w1 = uniform_values(rng, 3 * 2 * 9, -0.7, 0.7);
                     std::vector<double> b1 = uniform_values(rng, 3, -0.2, 0.2);
                     std::vector<double> w2 = uniform_values(rng, 3 * 9, -0.7, 0.7);
                     std::vector<double> b2 = uniform_values(rng, 1, -0.2, 0.2);
                     auto f = [&](Graph& g, const Tensor& x) {
                       Tensor cw1 = g.constant({3, 2, 3, 3}, w1);
                       Tensor cb1 = g.constant({3}, b1);
                       Tensor cw2 = g.constant({1, 3, 3, 3}, w2);
                       Tensor cb2 = g.constant({1}, b2);
                       Tensor h = g.leaky_relu(g.conv2d(x, cw1, &cb1, {1, 1, 1}), 0.2);
                       Tensor logits = g.conv2d(h, cw2, &cb2, {1, 1, 1});
                       Tensor pred = g.scale(g.sigmoid(logits), 10.0);
                       return silog_loss(g, pred, gt, mask, LossConfig{0.85});
                     };
                     return grad_check(f, shape, x0, kEps, kTol);
                   }});

  return cases;
}

std::vector<GradCheckCase> model_cases() {
  std::vector<GradCheckCase> cases;

  // Shared desk-scale model and target; the full forward is too large for
  // exhaustive differencing, so a deterministic coordinate sample is used.
  auto net = std::make_shared<DepthNet>(preset_config("desk").model, 99);
  auto scene = std::make_shared<DepthSample>(synth_scene(random_scene(4242, 64, 64, 10.0)));

  cases.push_back({"module.pem_forward", "[16x8x8]", [net]() {
                     Rng rng(38);
                     const Shape shape{16, 8, 8};
                     std::vector<double> x0 = uniform_values(rng, shape_numel(shape), -1, 1);
                     auto f = [net](Graph& g, const Tensor& x) {
                       return weighted_sum(g, net->pem_forward(g, x, 0).features, 18);
                     };
                     return grad_check(f, shape, x0, kEps, kTol);
                   }});

  cases.push_back({"model.image", "[3x64x64] (96 sampled)", [net, scene]() {
                     std::vector<double> x0(scene->rgb.data.begin(), scene->rgb.data.end());
                     const std::vector<double> gt(scene->depth.data.begin(),
                                                  scene->depth.data.end());
                     const std::vector<std::uint8_t> mask(gt.size(), 1);
                     auto f = [&](Graph& g, const Tensor& x) {
                       Tensor depth = net->forward(g, x);
                       return silog_loss(g, depth, gt, mask, LossConfig{0.85});
                     };
                     return grad_check(f, {3, 64, 64}, x0, kEps, kTol, 96, 7);
                   }});

  cases.push_back({"model.attention_value_weight", "[96x96] (48 sampled)", [net, scene]() {
                     const std::vector<double> gt(scene->depth.data.begin(),
                                                  scene->depth.data.end());
                     const std::vector<std::uint8_t> mask(gt.size(), 1);
                     const std::vector<double> img(scene->rgb.data.begin(),
                                                   scene->rgb.data.end());
                     auto f = [&](Graph& g) {
                       Tensor image = g.constant({3, 64, 64}, img);
                       Tensor depth = net->forward(g, image);
                       return silog_loss(g, depth, gt, mask, LossConfig{0.85});
                     };
                     return grad_check_param(f, net->params().at("eam.value.w"), kEps,
                                             kTol, 48, 11);
                   }});

  cases.push_back({"model.head_weight", "[1x72x3x3] (48 sampled)", [net, scene]() {
                     const std::vector<double> gt(scene->depth.data.begin(),
                                                  scene->depth.data.end());
                     const std::vector<std::uint8_t> mask(gt.size(), 1);
                     const std::vector<double> img(scene->rgb.data.begin(),
                                                   scene->rgb.data.end());
                     auto f = [&](Graph& g) {
                       Tensor image = g.constant({3, 64, 64}, img);
                       Tensor depth = net->forward(g, image);
                       return silog_loss(g, depth, gt, mask, LossConfig{0.85});
                     };
                     return grad_check_param(f, net->params().at("decoder.head.w"), kEps,
                                             kTol, 48, 13);
                   }});
  return cases;
}

}  // namespace

std::vector<GradCheckCase> default_gradcheck_suite() {
  std::vector<GradCheckCase> cases = primitive_cases();
  for (auto& c : module_cases()) cases.push_back(std::move(c));
  for (auto& c : model_cases()) cases.push_back(std::move(c));
  return cases;
}

}  // namespace edgedepth
