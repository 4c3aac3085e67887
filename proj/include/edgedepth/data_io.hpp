#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgedepth/rng.hpp"

namespace edgedepth {

// Planar float raster: data laid out channel by channel, each channel
// row-major. Matches the on-disk DRF1 payload byte for byte.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  static Raster filled(int width, int height, int channels, float value);

  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::int64_t size() const {
    return static_cast<std::int64_t>(width) * height * channels;
  }
};

// DRF1 container: magic "DRF1", u32 width, u32 height, u32 channels, then
// width*height*channels little-endian f32 values.
void save_raster(const std::string& path, const Raster& raster);
Raster load_raster(const std::string& path);

// RGB in [0,1] plus metric depth; depth <= 0 marks an invalid pixel.
struct DepthSample {
  Raster rgb;    // 3 channels
  Raster depth;  // 1 channel
};

std::vector<std::uint8_t> sample_mask(const DepthSample& sample);

// --- synthetic scenes ----------------------------------------------------------

struct ScenePrimitive {
  enum class Kind { kSphere, kBox, kPlane };
  Kind kind = Kind::kPlane;
  // sphere: p = center, q.x = radius; box: p/q = min/max corners;
  // plane: p = anchor point, q = normal.
  double px = 0, py = 0, pz = 0;
  double qx = 0, qy = 0, qz = 1;
  double albedo[3] = {0.5, 0.5, 0.5};
  double checker = 0.0;  // texture contrast in [0, 1]
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  std::vector<ScenePrimitive> primitives;
  double light[3] = {0.3, -0.5, -0.8};  // direction the light travels
  double max_depth = 10.0;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

// Unnormalized view ray for a pixel; z component is always 1, so the ray
// parameter of a hit equals its planar depth.
Vec3 camera_ray(const SceneSpec& spec, int x, int y);

// Randomized scene with a full-coverage background plane plus a few
// foreground spheres, boxes and tilted planes.
SceneSpec random_scene(std::uint64_t seed, int width, int height, double max_depth);

// Ray-casts the nearest primitive per pixel; RGB is Lambertian shading with
// a mild depth falloff so appearance carries depth information.
DepthSample synth_scene(const SceneSpec& spec);

// --- augmentation ----------------------------------------------------------------

struct AugmentConfig {
  double hflip_prob = 0.5;
  double rotate_deg = 0.0;  // angle drawn uniformly from [-rotate_deg, rotate_deg]
  double brightness = 0.0;
  double contrast = 0.0;
  double color = 0.0;
};

// Flip and rotation apply jointly to image, depth and mask (rotated-out
// pixels become invalid); photometric jitter touches RGB only.
DepthSample augment(const DepthSample& sample, const AugmentConfig& cfg, Rng& rng);

// --- evaluation crops ---------------------------------------------------------------

enum class CropMode { kNone, kKittiBottomCenter, kEigenCenter };

CropMode crop_mode_from_string(const std::string& name);
std::string crop_mode_name(CropMode mode);

DepthSample crop(const DepthSample& sample, CropMode mode);

// --- dataset directory layout ----------------------------------------------------

// <root>/<split>/<id>.rgb.drf + <id>.depth.drf
void save_sample(const std::string& split_dir, const std::string& id,
                 const DepthSample& sample);
DepthSample load_sample(const std::string& split_dir, const std::string& id);
std::vector<std::string> list_sample_ids(const std::string& split_dir);

void generate_dataset(const std::string& split_dir, int count, std::uint64_t seed,
                      int width, int height, double max_depth);

}  // namespace edgedepth
