#include "edgedepth/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "edgedepth/errors.hpp"

namespace edgedepth {

namespace fs = std::filesystem;

Raster Raster::filled(int width, int height, int channels, float value) {
  Raster r;
  r.width = width;
  r.height = height;
  r.channels = channels;
  r.data.assign(static_cast<std::size_t>(width) * height * channels, value);
  return r;
}

// --- DRF1 ------------------------------------------------------------------

namespace {

constexpr char kRasterMagic[4] = {'D', 'R', 'F', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32_le(out, bits);
}

std::uint32_t get_u32_le(const std::string& data, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void save_raster(const std::string& path, const Raster& raster) {
  if (raster.width < 1 || raster.height < 1 || raster.channels < 1 ||
      raster.size() != static_cast<std::int64_t>(raster.data.size())) {
    throw DomainError("save_raster: inconsistent raster extents");
  }
  for (float v : raster.data) {
    if (!std::isfinite(v)) {
      throw DomainError("save_raster: raster contains a non-finite value");
    }
  }
  std::string out;
  out.append(kRasterMagic, 4);
  put_u32_le(out, static_cast<std::uint32_t>(raster.width));
  put_u32_le(out, static_cast<std::uint32_t>(raster.height));
  put_u32_le(out, static_cast<std::uint32_t>(raster.channels));
  for (float v : raster.data) put_f32_le(out, v);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("save_raster: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("save_raster: write failed for '" + path + "'");
}

Raster load_raster(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_raster: cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (data.size() < 4 || std::memcmp(data.data(), kRasterMagic, 4) != 0) {
    throw FormatError("raster magic mismatch (expected DRF1)", 0);
  }
  if (data.size() < 16) {
    throw FormatError("raster truncated in header", data.size());
  }
  Raster r;
  r.width = static_cast<int>(get_u32_le(data, 4));
  r.height = static_cast<int>(get_u32_le(data, 8));
  r.channels = static_cast<int>(get_u32_le(data, 12));
  if (r.width < 1 || r.height < 1 || r.channels < 1) {
    throw FormatError("raster header has zero extent", 4);
  }
  const std::size_t expect = 16 + static_cast<std::size_t>(r.size()) * 4;
  if (data.size() < expect) {
    throw FormatError("raster payload truncated", data.size());
  }
  if (data.size() > expect) {
    throw FormatError("raster has trailing bytes", expect);
  }
  r.data.resize(static_cast<std::size_t>(r.size()));
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const std::uint32_t bits = get_u32_le(data, 16 + i * 4);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    if (!std::isfinite(v)) {
      throw FormatError("raster payload contains a non-finite value", 16 + i * 4);
    }
    r.data[i] = v;
  }
  return r;
}

std::vector<std::uint8_t> sample_mask(const DepthSample& sample) {
  std::vector<std::uint8_t> mask(sample.depth.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = sample.depth.data[i] > 0.0f ? 1 : 0;
  }
  return mask;
}

// --- scene synthesis ----------------------------------------------------------

namespace {

struct Hit {
  double t = -1.0;  // ray parameter == planar depth (ray z component is 1)
  Vec3 normal;
  Vec3 point;
  const ScenePrimitive* prim = nullptr;
};

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 scale_vec(const Vec3& v, double s) { return {v.x * s, v.y * s, v.z * s}; }

Vec3 normalize(const Vec3& v) {
  const double len = std::sqrt(dot(v, v));
  return len > 0.0 ? scale_vec(v, 1.0 / len) : v;
}

bool intersect(const ScenePrimitive& prim, const Vec3& dir, Hit* hit) {
  switch (prim.kind) {
    case ScenePrimitive::Kind::kPlane: {
      const Vec3 n = normalize({prim.qx, prim.qy, prim.qz});
      const double denom = dot(dir, n);
      if (std::fabs(denom) < 1e-12) return false;
      const double t = (prim.px * n.x + prim.py * n.y + prim.pz * n.z) / denom;
      if (t <= 1e-9) return false;
      hit->t = t;
      hit->point = scale_vec(dir, t);
      hit->normal = denom < 0.0 ? n : scale_vec(n, -1.0);
      return true;
    }
    case ScenePrimitive::Kind::kSphere: {
      const Vec3 c{prim.px, prim.py, prim.pz};
      const double r = prim.qx;
      const double a = dot(dir, dir);
      const double b = -2.0 * dot(dir, c);
      const double cc = dot(c, c) - r * r;
      const double disc = b * b - 4.0 * a * cc;
      if (disc < 0.0) return false;
      const double sq = std::sqrt(disc);
      double t = (-b - sq) / (2.0 * a);
      if (t <= 1e-9) t = (-b + sq) / (2.0 * a);
      if (t <= 1e-9) return false;
      hit->t = t;
      hit->point = scale_vec(dir, t);
      hit->normal = normalize({hit->point.x - c.x, hit->point.y - c.y, hit->point.z - c.z});
      return true;
    }
    case ScenePrimitive::Kind::kBox: {
      const double lo[3] = {prim.px, prim.py, prim.pz};
      const double hi[3] = {prim.qx, prim.qy, prim.qz};
      const double d[3] = {dir.x, dir.y, dir.z};
      double t0 = -1e30, t1 = 1e30;
      int axis0 = 0;
      for (int a = 0; a < 3; ++a) {
        if (std::fabs(d[a]) < 1e-12) {
          if (0.0 < lo[a] || 0.0 > hi[a]) return false;
          continue;
        }
        double ta = lo[a] / d[a];
        double tb = hi[a] / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
          t0 = ta;
          axis0 = a;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
      }
      if (t0 <= 1e-9) return false;  // rays start outside the boxes we generate
      hit->t = t0;
      hit->point = scale_vec(dir, t0);
      hit->normal = {0, 0, 0};
      const double mid = 0.5 * (lo[axis0] + hi[axis0]);
      const double sign = (axis0 == 0 ? hit->point.x : axis0 == 1 ? hit->point.y : hit->point.z) < mid ? -1.0 : 1.0;
      if (axis0 == 0) hit->normal.x = sign;
      else if (axis0 == 1) hit->normal.y = sign;
      else hit->normal.z = sign;
      return true;
    }
  }
  return false;
}

}  // namespace

Vec3 camera_ray(const SceneSpec& spec, int x, int y) {
  // 60 degree vertical field of view; z normalized to 1.
  const double tan_half = std::tan(M_PI / 6.0);
  const double aspect = static_cast<double>(spec.width) / spec.height;
  const double u = ((x + 0.5) / spec.width * 2.0 - 1.0) * tan_half * aspect;
  const double v = ((y + 0.5) / spec.height * 2.0 - 1.0) * tan_half;
  return {u, v, 1.0};
}

SceneSpec random_scene(std::uint64_t seed, int width, int height, double max_depth) {
  SceneSpec spec;
  spec.seed = seed;
  spec.width = width;
  spec.height = height;
  spec.max_depth = max_depth;
  Rng rng(seed ^ 0xd1f2c3b4a5968778ull);

  const Vec3 light = normalize({rng.uniform(-0.6, 0.6), rng.uniform(-0.8, -0.2),
                                rng.uniform(-1.0, -0.6)});
  spec.light[0] = light.x;
  spec.light[1] = light.y;
  spec.light[2] = light.z;

  ScenePrimitive bg;
  bg.kind = ScenePrimitive::Kind::kPlane;
  const double bg_depth = rng.uniform(0.50, 0.70) * max_depth;
  bg.px = 0;
  bg.py = 0;
  bg.pz = bg_depth;
  // A noticeable tilt gives every scene a smooth large-scale depth ramp.
  bg.qx = rng.uniform(-0.22, 0.22);
  bg.qy = rng.uniform(-0.22, 0.22);
  bg.qz = -1.0;
  bg.albedo[0] = rng.uniform(0.4, 0.9);
  bg.albedo[1] = rng.uniform(0.4, 0.9);
  bg.albedo[2] = rng.uniform(0.4, 0.9);
  bg.checker = rng.uniform(0.1, 0.3);
  spec.primitives.push_back(bg);

  const Vec3 n = normalize({bg.qx, bg.qy, bg.qz});
  const double plane_dot = bg.px * n.x + bg.py * n.y + bg.pz * n.z;
  const double tan_half = std::tan(M_PI / 6.0);

  // Relief geometry: bumps and shallow tiles embedded in the background so
  // the depth field stays (nearly) continuous. Hard silhouettes against a
  // distant plane would smear across the decoder's quarter-resolution head
  // and dominate the loss floor.
  const int count = rng.uniform_int(2, 4);
  for (int i = 0; i < count; ++i) {
    ScenePrimitive prim;
    // A point on the background plane inside the view frustum.
    const Vec3 dir{rng.uniform(-0.7, 0.7) * tan_half, rng.uniform(-0.7, 0.7) * tan_half,
                   1.0};
    const double t = plane_dot / dot(dir, n);
    const Vec3 on_plane = scale_vec(dir, t);
    if (rng.bernoulli(0.6)) {
      // Hemispherical bump: center sits on the plane, so the sphere meets
      // the background exactly at its silhouette.
      prim.kind = ScenePrimitive::Kind::kSphere;
      prim.px = on_plane.x;
      prim.py = on_plane.y;
      prim.pz = on_plane.z;
      prim.qx = rng.uniform(0.10, 0.30) * on_plane.z;
    } else {
      // Shallow axis-aligned tile raised slightly off the plane.
      const double hx = rng.uniform(0.10, 0.25) * on_plane.z;
      const double hy = rng.uniform(0.10, 0.25) * on_plane.z;
      const double lift = rng.uniform(0.02, 0.06) * on_plane.z;
      prim.kind = ScenePrimitive::Kind::kBox;
      prim.px = on_plane.x - hx;
      prim.py = on_plane.y - hy;
      prim.pz = on_plane.z - lift;
      prim.qx = on_plane.x + hx;
      prim.qy = on_plane.y + hy;
      prim.qz = on_plane.z + 2.0 * hx;  // rear extends behind the plane
    }
    prim.albedo[0] = rng.uniform(0.3, 1.0);
    prim.albedo[1] = rng.uniform(0.3, 1.0);
    prim.albedo[2] = rng.uniform(0.3, 1.0);
    prim.checker = rng.bernoulli(0.3) ? rng.uniform(0.15, 0.35) : 0.0;
    spec.primitives.push_back(prim);
  }
  return spec;
}

DepthSample synth_scene(const SceneSpec& spec) {
  if (spec.primitives.empty()) {
    throw ConfigError("synth_scene: primitive list is empty");
  }
  if (spec.width % 32 != 0 || spec.height % 32 != 0) {
    throw ConfigError("synth_scene: extents must be multiples of 32");
  }
  DepthSample out;
  out.rgb = Raster::filled(spec.width, spec.height, 3, 0.0f);
  out.depth = Raster::filled(spec.width, spec.height, 1, 0.0f);
  const Vec3 light = normalize({spec.light[0], spec.light[1], spec.light[2]});

  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Vec3 dir = camera_ray(spec, x, y);
      Hit best;
      for (const ScenePrimitive& prim : spec.primitives) {
        Hit h;
        if (intersect(prim, dir, &h) && (best.t < 0.0 || h.t < best.t)) {
          h.prim = &prim;
          best = h;
          best.prim = &prim;
        }
      }
      if (best.t < 0.0) continue;  // background plane normally prevents this
      const double depth = std::min(best.t, spec.max_depth);
      out.depth.at(0, y, x) = static_cast<float>(depth);

      const double lambert = std::max(0.0, dot(best.normal, scale_vec(light, -1.0)));
      double tex = 1.0;
      if (best.prim->checker > 0.0) {
        const int parity = (static_cast<int>(std::floor(best.point.x * 2.0)) +
                            static_cast<int>(std::floor(best.point.y * 2.0)) +
                            static_cast<int>(std::floor(best.point.z * 2.0))) & 1;
        tex = parity ? 1.0 - 0.5 * best.prim->checker : 1.0;
      }
      const double falloff = 1.0 / (1.0 + 0.12 * depth);
      const double shade = (0.25 + 0.75 * lambert) * tex * falloff;
      for (int c = 0; c < 3; ++c) {
        out.rgb.at(c, y, x) = static_cast<float>(
            std::clamp(best.prim->albedo[c] * shade, 0.0, 1.0));
      }
    }
  }
  return out;
}

// --- augmentation ---------------------------------------------------------------

DepthSample augment(const DepthSample& sample, const AugmentConfig& cfg, Rng& rng) {
  DepthSample out = sample;
  const int w = sample.rgb.width, h = sample.rgb.height;

  // Draw order is fixed so a run is reproducible from its seed alone.
  const bool flip = rng.bernoulli(cfg.hflip_prob);
  const double angle = cfg.rotate_deg > 0.0
                           ? rng.uniform(-cfg.rotate_deg, cfg.rotate_deg) * M_PI / 180.0
                           : 0.0;
  const double brightness = cfg.brightness > 0.0 ? rng.uniform(-cfg.brightness, cfg.brightness) : 0.0;
  const double contrast = cfg.contrast > 0.0 ? rng.uniform(-cfg.contrast, cfg.contrast) : 0.0;
  double color[3] = {0.0, 0.0, 0.0};
  if (cfg.color > 0.0) {
    for (double& c : color) c = rng.uniform(-cfg.color, cfg.color);
  }

  if (flip) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.rgb.at(c, y, x) = sample.rgb.at(c, y, w - 1 - x);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.depth.at(0, y, x) = sample.depth.at(0, y, w - 1 - x);
    }
  }

  if (angle != 0.0) {
    const DepthSample src = out;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Inverse map with nearest sampling; keeps depth values exact.
        const double dx = x - cx, dy = y - cy;
        const int sx = static_cast<int>(std::lround(cx + cs * dx + sn * dy));
        const int sy = static_cast<int>(std::lround(cy - sn * dx + cs * dy));
        if (sx < 0 || sx >= w || sy < 0 || sy >= h) {
          for (int c = 0; c < 3; ++c) out.rgb.at(c, y, x) = 0.0f;
          out.depth.at(0, y, x) = 0.0f;  // invalid
        } else {
          for (int c = 0; c < 3; ++c) out.rgb.at(c, y, x) = src.rgb.at(c, sy, sx);
          out.depth.at(0, y, x) = src.depth.at(0, sy, sx);
        }
      }
    }
  }

  for (int c = 0; c < 3; ++c) {
    const float gain = static_cast<float>((1.0 + contrast) * (1.0 + color[c]));
    const float offset = static_cast<float>(0.5 * (1.0 - (1.0 + contrast)) * (1.0 + color[c]) + brightness);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.rgb.at(c, y, x) = std::clamp(out.rgb.at(c, y, x) * gain + offset, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

// --- crops ------------------------------------------------------------------------

namespace {

constexpr int kKittiCropW = 1216;
constexpr int kKittiCropH = 352;

// Fractional interior window of the Eigen evaluation protocol as used
// throughout the monocular depth literature (rows 0.3324..0.9135 of the
// height, columns 0.0359..0.9640 of the width).
constexpr double kEigenCrop[4] = {0.3324324, 0.91351351, 0.0359477, 0.96405229};

DepthSample crop_window(const DepthSample& sample, int x0, int y0, int cw, int ch) {
  DepthSample out;
  out.rgb = Raster::filled(cw, ch, 3, 0.0f);
  out.depth = Raster::filled(cw, ch, 1, 0.0f);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      for (int c = 0; c < 3; ++c) out.rgb.at(c, y, x) = sample.rgb.at(c, y0 + y, x0 + x);
      out.depth.at(0, y, x) = sample.depth.at(0, y0 + y, x0 + x);
    }
  }
  return out;
}

}  // namespace

CropMode crop_mode_from_string(const std::string& name) {
  if (name == "none") return CropMode::kNone;
  if (name == "kitti") return CropMode::kKittiBottomCenter;
  if (name == "eigen") return CropMode::kEigenCenter;
  throw ConfigError("crop: unknown mode '" + name + "' (none|kitti|eigen)");
}

std::string crop_mode_name(CropMode mode) {
  switch (mode) {
    case CropMode::kNone: return "none";
    case CropMode::kKittiBottomCenter: return "kitti";
    case CropMode::kEigenCenter: return "eigen";
  }
  return "?";
}

DepthSample crop(const DepthSample& sample, CropMode mode) {
  const int w = sample.rgb.width, h = sample.rgb.height;
  switch (mode) {
    case CropMode::kNone:
      return sample;
    case CropMode::kKittiBottomCenter: {
      if (w < kKittiCropW || h < kKittiCropH) {
        throw ShapeError("crop: raster " + std::to_string(w) + "x" + std::to_string(h) +
                         " smaller than " + std::to_string(kKittiCropW) + "x" +
                         std::to_string(kKittiCropH));
      }
      const int x0 = (w - kKittiCropW) / 2;
      const int y0 = h - kKittiCropH;
      return crop_window(sample, x0, y0, kKittiCropW, kKittiCropH);
    }
    case CropMode::kEigenCenter: {
      const int y0 = static_cast<int>(kEigenCrop[0] * h);
      const int y1 = static_cast<int>(kEigenCrop[1] * h);
      const int x0 = static_cast<int>(kEigenCrop[2] * w);
      const int x1 = static_cast<int>(kEigenCrop[3] * w);
      if (y1 <= y0 || x1 <= x0) {
        throw ShapeError("crop: raster too small for the eigen window");
      }
      return crop_window(sample, x0, y0, x1 - x0, y1 - y0);
    }
  }
  throw ConfigError("crop: invalid mode");
}

// --- dataset layout -----------------------------------------------------------------

void save_sample(const std::string& split_dir, const std::string& id,
                 const DepthSample& sample) {
  fs::create_directories(split_dir);
  save_raster((fs::path(split_dir) / (id + ".rgb.drf")).string(), sample.rgb);
  save_raster((fs::path(split_dir) / (id + ".depth.drf")).string(), sample.depth);
}

DepthSample load_sample(const std::string& split_dir, const std::string& id) {
  DepthSample s;
  s.rgb = load_raster((fs::path(split_dir) / (id + ".rgb.drf")).string());
  s.depth = load_raster((fs::path(split_dir) / (id + ".depth.drf")).string());
  if (s.rgb.channels != 3 || s.depth.channels != 1 || s.rgb.width != s.depth.width ||
      s.rgb.height != s.depth.height) {
    throw ConfigError("load_sample: inconsistent rasters for id '" + id + "'");
  }
  return s;
}

std::vector<std::string> list_sample_ids(const std::string& split_dir) {
  std::vector<std::string> ids;
  const std::string suffix = ".rgb.drf";
  if (!fs::exists(split_dir)) {
    throw ConfigError("dataset split directory '" + split_dir + "' does not exist");
  }
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void generate_dataset(const std::string& split_dir, int count, std::uint64_t seed,
                      int width, int height, double max_depth) {
  for (int i = 0; i < count; ++i) {
    const SceneSpec spec = random_scene(seed + static_cast<std::uint64_t>(i) * 1000003ull,
                                        width, height, max_depth);
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    save_sample(split_dir, id, synth_scene(spec));
  }
}

}  // namespace edgedepth
