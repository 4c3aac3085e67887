#include "edgedepth/data_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "edgedepth/errors.hpp"
#include "edgedepth/loss_metrics.hpp"

using namespace edgedepth;

namespace {

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

Raster random_raster(std::uint64_t seed, int w, int h, int c) {
  Rng rng(seed);
  Raster r = Raster::filled(w, h, c, 0.0f);
  for (float& v : r.data) v = static_cast<float>(rng.uniform(-100, 100));
  return r;
}

}  // namespace

// --- DRF1 ------------------------------------------------------------------------

TEST(RasterTest, SingleValueRoundTrip) {
  Raster r = Raster::filled(1, 1, 1, 3.5f);
  const std::string path = temp_path("single.drf");
  save_raster(path, r);
  EXPECT_EQ(std::filesystem::file_size(path), 20u);  // 16-byte header + one f32
  Raster back = load_raster(path);
  EXPECT_EQ(back.width, 1);
  EXPECT_EQ(back.height, 1);
  EXPECT_EQ(back.channels, 1);
  EXPECT_EQ(back.data, r.data);
}

TEST(RasterTest, PayloadSizeArithmetic) {
  Raster r = random_raster(1, 2, 2, 3);
  const std::string path = temp_path("payload.drf");
  save_raster(path, r);
  // 3 channels of 2x2 f32 = 48 payload bytes.
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 48u);
}

TEST(RasterTest, CorruptedMagicReportsOffsetZero) {
  const std::string path = temp_path("badmagic.drf");
  {
    std::ofstream f(path, std::ios::binary);
    f << "XXXX";
    const std::uint32_t dims[3] = {1, 1, 1};
    f.write(reinterpret_cast<const char*>(dims), 12);
    const float v = 1.0f;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    load_raster(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(RasterTest, TruncationReportsOffset) {
  Raster r = random_raster(2, 4, 4, 1);
  const std::string path = temp_path("trunc.drf");
  save_raster(path, r);
  // Chop the last 10 bytes off.
  std::ifstream in(path, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size() - 10));
  out.close();
  try {
    load_raster(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), data.size() - 10);
  }
}

TEST(RasterTest, NonFiniteValuesRejectedOnSave) {
  Raster r = Raster::filled(1, 1, 1, std::numeric_limits<float>::infinity());
  EXPECT_THROW(save_raster(temp_path("inf.drf"), r), DomainError);
}

TEST(RasterTest, RandomizedBitwiseRoundTrips) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int w = rng.uniform_int(1, 12);
    const int h = rng.uniform_int(1, 12);
    const int c = rng.uniform_int(1, 4);
    Raster r = random_raster(1000 + trial, w, h, c);
    const std::string path = temp_path("roundtrip.drf");
    save_raster(path, r);
    Raster back = load_raster(path);
    ASSERT_EQ(back.width, w);
    ASSERT_EQ(back.height, h);
    ASSERT_EQ(back.channels, c);
    ASSERT_EQ(back.data, r.data);  // bitwise (float equality on finite values)
  }
}

// --- synthetic scenes -----------------------------------------------------------

TEST(SceneTest, FrontoParallelPlaneHasConstantDepth) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.max_depth = 10.0;
  ScenePrimitive plane;
  plane.kind = ScenePrimitive::Kind::kPlane;
  plane.px = 0;
  plane.py = 0;
  plane.pz = 5.0;
  plane.qx = 0;
  plane.qy = 0;
  plane.qz = -1.0;
  spec.primitives.push_back(plane);
  DepthSample s = synth_scene(spec);
  for (float v : s.depth.data) EXPECT_FLOAT_EQ(v, 5.0f);
}

TEST(SceneTest, DeterministicForFixedSeed) {
  const SceneSpec spec = random_scene(99, 64, 64, 10.0);
  DepthSample a = synth_scene(spec);
  DepthSample b = synth_scene(spec);
  EXPECT_EQ(a.rgb.data, b.rgb.data);
  EXPECT_EQ(a.depth.data, b.depth.data);

  const SceneSpec spec2 = random_scene(99, 64, 64, 10.0);
  DepthSample c = synth_scene(spec2);
  EXPECT_EQ(a.depth.data, c.depth.data);
}

TEST(SceneTest, SphereDepthMatchesRayArithmetic) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.max_depth = 10.0;
  // Background plus a sphere centered on the ray of pixel (20, 12).
  ScenePrimitive bg;
  bg.kind = ScenePrimitive::Kind::kPlane;
  bg.pz = 9.0;
  bg.qz = -1.0;
  spec.primitives.push_back(bg);

  const Vec3 dir = camera_ray(spec, 20, 12);
  const double cz = 4.0;  // sphere center sits at parameter 4 along the ray
  ScenePrimitive sphere;
  sphere.kind = ScenePrimitive::Kind::kSphere;
  sphere.px = cz * dir.x;
  sphere.py = cz * dir.y;
  sphere.pz = cz * dir.z;
  sphere.qx = 1.0;  // radius
  spec.primitives.push_back(sphere);

  DepthSample s = synth_scene(spec);
  // Ray-sphere: |t*dir - c| = r with c = cz*dir gives t = cz - r/|dir|.
  const double len = std::sqrt(dir.x * dir.x + dir.y * dir.y + dir.z * dir.z);
  const double expect = cz - 1.0 / len;
  EXPECT_NEAR(s.depth.at(0, 12, 20), expect, 1e-6);
}

TEST(SceneTest, EmptyPrimitiveListRejected) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  EXPECT_THROW(synth_scene(spec), ConfigError);
}

TEST(SceneTest, RandomScenesCoverEveryPixelWithinRange) {
  for (std::uint64_t seed : {1ull, 7ull, 42ull}) {
    DepthSample s = synth_scene(random_scene(seed, 64, 64, 10.0));
    for (float v : s.depth.data) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LE(v, 10.0f);
    }
    for (float v : s.rgb.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

// --- augmentation -----------------------------------------------------------------

TEST(AugmentTest, DoubleFlipIsIdentity) {
  DepthSample s = synth_scene(random_scene(5, 64, 64, 10.0));
  AugmentConfig cfg;
  cfg.hflip_prob = 1.0;  // force the flip
  Rng r1(1), r2(2);
  DepthSample once = augment(s, cfg, r1);
  DepthSample twice = augment(once, cfg, r2);
  EXPECT_EQ(twice.rgb.data, s.rgb.data);
  EXPECT_EQ(twice.depth.data, s.depth.data);
}

TEST(AugmentTest, ZeroRotationIsIdentity) {
  DepthSample s = synth_scene(random_scene(6, 64, 64, 10.0));
  AugmentConfig cfg;  // all probabilities and ranges zero
  cfg.hflip_prob = 0.0;
  Rng rng(3);
  DepthSample out = augment(s, cfg, rng);
  EXPECT_EQ(out.rgb.data, s.rgb.data);
  EXPECT_EQ(out.depth.data, s.depth.data);
}

TEST(AugmentTest, PhotometricJitterLeavesDepthBitIdentical) {
  DepthSample s = synth_scene(random_scene(7, 64, 64, 10.0));
  AugmentConfig cfg;
  cfg.hflip_prob = 0.0;
  cfg.brightness = 0.3;
  cfg.contrast = 0.3;
  cfg.color = 0.2;
  Rng rng(4);
  DepthSample out = augment(s, cfg, rng);
  EXPECT_EQ(out.depth.data, s.depth.data);
  EXPECT_NE(out.rgb.data, s.rgb.data);
}

TEST(AugmentTest, RotationMasksOutOfFramePixels) {
  DepthSample s = synth_scene(random_scene(8, 64, 64, 10.0));
  AugmentConfig cfg;
  cfg.hflip_prob = 0.0;
  cfg.rotate_deg = 10.0;
  Rng rng(5);
  DepthSample out = augment(s, cfg, rng);
  const std::vector<std::uint8_t> mask = sample_mask(out);
  std::size_t invalid = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) {
      ++invalid;
      EXPECT_EQ(out.depth.data[i], 0.0f);
    }
  }
  EXPECT_GT(invalid, 0u);  // corners rotate out of frame
  // Valid depths are a subset of the original values (nearest sampling).
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) EXPECT_GT(out.depth.data[i], 0.0f);
  }
}

TEST(AugmentTest, FlipAppliesJointlyToAllPlanes) {
  DepthSample s = synth_scene(random_scene(9, 64, 64, 10.0));
  AugmentConfig cfg;
  cfg.hflip_prob = 1.0;
  Rng rng(6);
  DepthSample out = augment(s, cfg, rng);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      EXPECT_EQ(out.depth.at(0, y, x), s.depth.at(0, y, 63 - x));
      EXPECT_EQ(out.rgb.at(1, y, x), s.rgb.at(1, y, 63 - x));
    }
  }
}

// --- crops ------------------------------------------------------------------------

namespace {

DepthSample coordinate_sample(int w, int h) {
  DepthSample s;
  s.rgb = Raster::filled(w, h, 3, 0.0f);
  s.depth = Raster::filled(w, h, 1, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      s.depth.at(0, y, x) = static_cast<float>(y * 10000 + x + 1);
    }
  }
  return s;
}

}  // namespace

TEST(CropTest, DrivingBottomCenterWindow) {
  DepthSample s = coordinate_sample(1241, 375);
  DepthSample out = crop(s, CropMode::kKittiBottomCenter);
  EXPECT_EQ(out.depth.width, 1216);
  EXPECT_EQ(out.depth.height, 352);
  // Horizontally centered: x0 = (1241 - 1216) / 2 = 12; bottom: y0 = 23.
  EXPECT_EQ(out.depth.at(0, 0, 0), s.depth.at(0, 23, 12));
  EXPECT_EQ(out.depth.at(0, 351, 1215), s.depth.at(0, 374, 1227));
}

TEST(CropTest, TooSmallForDrivingWindowIsShapeError) {
  DepthSample s = coordinate_sample(640, 480);
  EXPECT_THROW(crop(s, CropMode::kKittiBottomCenter), ShapeError);
}

TEST(CropTest, NoneIsIdentity) {
  DepthSample s = coordinate_sample(64, 64);
  DepthSample out = crop(s, CropMode::kNone);
  EXPECT_EQ(out.depth.data, s.depth.data);
}

TEST(CropTest, EigenInteriorWindow) {
  DepthSample s = coordinate_sample(640, 480);
  DepthSample out = crop(s, CropMode::kEigenCenter);
  // Fractions of 480x640: rows [159, 438), cols [23, 616).
  EXPECT_EQ(out.depth.height, 438 - 159);
  EXPECT_EQ(out.depth.width, 616 - 23);
  EXPECT_EQ(out.depth.at(0, 0, 0), s.depth.at(0, 159, 23));
}

TEST(CropTest, ConstantRasterStaysConstant) {
  DepthSample s;
  s.rgb = Raster::filled(1280, 384, 3, 0.25f);
  s.depth = Raster::filled(1280, 384, 1, 4.0f);
  DepthSample out = crop(s, CropMode::kKittiBottomCenter);
  for (float v : out.depth.data) EXPECT_EQ(v, 4.0f);
}

TEST(CropTest, ModeNamesRoundTrip) {
  EXPECT_EQ(crop_mode_from_string("none"), CropMode::kNone);
  EXPECT_EQ(crop_mode_from_string("kitti"), CropMode::kKittiBottomCenter);
  EXPECT_EQ(crop_mode_from_string("eigen"), CropMode::kEigenCenter);
  EXPECT_THROW(crop_mode_from_string("garbage"), ConfigError);
  EXPECT_EQ(crop_mode_name(CropMode::kEigenCenter), "eigen");
}

// --- rotation + mask interaction with the loss -----------------------------------

TEST(AugmentTest, RotatedBorderNeverEntersLoss) {
  DepthSample s = synth_scene(random_scene(10, 64, 64, 10.0));
  AugmentConfig cfg;
  cfg.hflip_prob = 0.0;
  cfg.rotate_deg = 8.0;
  Rng rng(7);
  DepthSample rotated = augment(s, cfg, rng);
  const std::vector<std::uint8_t> mask = sample_mask(rotated);
  const std::vector<double> gt(rotated.depth.data.begin(), rotated.depth.data.end());

  // A prediction with garbage at masked pixels must still evaluate cleanly.
  std::vector<double> pred = gt;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) pred[i] = -5.0;
  }
  Graph g;
  Tensor p = g.constant({64, 64}, pred);
  Tensor loss = silog_loss(g, p, gt, mask, {});
  EXPECT_EQ(loss.scalar(), 0.0);  // valid pixels match exactly
}

// --- dataset layout ----------------------------------------------------------------

TEST(DatasetTest, SaveLoadListRoundTrip) {
  const std::string dir = temp_path("split_a");
  std::filesystem::remove_all(dir);
  DepthSample s = synth_scene(random_scene(11, 32, 32, 10.0));
  save_sample(dir, "000001", s);
  save_sample(dir, "000000", s);
  const std::vector<std::string> ids = list_sample_ids(dir);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], "000000");  // sorted
  EXPECT_EQ(ids[1], "000001");
  DepthSample back = load_sample(dir, "000001");
  EXPECT_EQ(back.rgb.data, s.rgb.data);
  EXPECT_EQ(back.depth.data, s.depth.data);
}

TEST(DatasetTest, GenerateWritesRequestedCount) {
  const std::string dir = temp_path("split_b");
  std::filesystem::remove_all(dir);
  generate_dataset(dir, 5, 123, 32, 32, 10.0);
  EXPECT_EQ(list_sample_ids(dir).size(), 5u);
  // Regenerating with the same seed reproduces the files bit for bit.
  DepthSample a = load_sample(dir, "000003");
  generate_dataset(dir, 5, 123, 32, 32, 10.0);
  DepthSample b = load_sample(dir, "000003");
  EXPECT_EQ(a.rgb.data, b.rgb.data);
  EXPECT_EQ(a.depth.data, b.depth.data);
}

TEST(DatasetTest, MissingSplitDirectoryIsConfigError) {
  EXPECT_THROW(list_sample_ids(temp_path("no_such_dir")), ConfigError);
}
