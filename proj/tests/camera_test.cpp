#include "thn/camera.hpp"

#include <gtest/gtest.h>

#include "thn/metrics.hpp"
#include "thn/synth.hpp"

using thn::CameraIntrinsics;
using thn::CropSpec;
using thn::Vec3;

namespace {

const CameraIntrinsics kCam{500, 500, 160, 160};

TEST(Projection, PrincipalRay) {
  const Vec3 q = thn::xyz_to_uvd({0, 0, 450}, kCam);
  EXPECT_DOUBLE_EQ(q[0], 160);
  EXPECT_DOUBLE_EQ(q[1], 160);
  EXPECT_DOUBLE_EQ(q[2], 450);
  const Vec3 p = thn::uvd_to_xyz({160, 160, 450}, kCam);
  EXPECT_DOUBLE_EQ(p[0], 0);
  EXPECT_DOUBLE_EQ(p[1], 0);
}

TEST(Projection, DerivedPinholeArithmetic) {
  const Vec3 q = thn::xyz_to_uvd({100, -50, 500}, kCam);
  EXPECT_DOUBLE_EQ(q[0], 260);
  EXPECT_DOUBLE_EQ(q[1], 110);
  EXPECT_DOUBLE_EQ(q[2], 500);
  const Vec3 p = thn::uvd_to_xyz({260, 110, 500}, kCam);
  EXPECT_DOUBLE_EQ(p[0], 100);
  EXPECT_DOUBLE_EQ(p[1], -50);
}

TEST(Projection, RoundTripAndErrors) {
  thn::Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p{rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(100, 1200)};
    const Vec3 back = thn::uvd_to_xyz(thn::xyz_to_uvd(p, kCam), kCam);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], p[k], 1e-9);
  }
  EXPECT_THROW(thn::xyz_to_uvd({0, 0, -1}, kCam), std::invalid_argument);
  EXPECT_THROW(thn::uvd_to_xyz({10, 10, 0}, kCam), std::invalid_argument);
}

thn::DepthFrame flat_frame(int h, int w, float depth_mm) {
  thn::DepthFrame f;
  f.height = h;
  f.width = w;
  f.intrinsics = kCam;
  f.depth.assign(std::size_t(h) * w, depth_mm);
  return f;
}

TEST(Crop, AllMissingGivesAllBackground) {
  thn::DepthFrame f = flat_frame(320, 320, 0.0f);
  f.joints_xyz.push_back({0, 0, 500});
  CropSpec crop;
  crop.center_xyz = {0, 0, 500};
  crop.out_size = 32;
  const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
  for (float px : nc.image) EXPECT_EQ(px, float(thn::kBackground));
}

TEST(Crop, CenterDepthMapsToZero) {
  thn::DepthFrame f = flat_frame(320, 320, 0.0f);
  CropSpec crop;
  crop.center_xyz = {0, 0, 500};
  crop.out_size = 32;
  // place the pixel exactly where crop pixel (16, 16) samples from
  const thn::CropWindow w = thn::make_crop_window(crop, kCam);
  const long su = std::lround(w.src_u(16)), sv = std::lround(w.src_v(16));
  f.depth[std::size_t(sv) * 320 + su] = 500.0f;  // depth exactly at center_z
  const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
  float min_val = 2.0f;
  for (float px : nc.image) min_val = std::min(min_val, px);
  EXPECT_EQ(min_val, 0.0f);
}

TEST(Crop, OutOfCubeDepthsBecomeBackground) {
  thn::DepthFrame f = flat_frame(320, 320, 900.0f);  // beyond 500 + 150
  CropSpec crop;
  crop.center_xyz = {0, 0, 500};
  crop.out_size = 32;
  const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
  for (float px : nc.image) EXPECT_EQ(px, float(thn::kBackground));
}

TEST(Crop, WindowFullyOutsideRasterIsRejected) {
  thn::DepthFrame f = flat_frame(64, 64, 500.0f);
  CropSpec crop;
  crop.center_xyz = thn::uvd_to_xyz({500, 500, 500}, kCam);
  crop.out_size = 32;
  EXPECT_THROW(thn::crop_and_normalize(f, crop), std::invalid_argument);
}

TEST(Crop, RoundTripReproducesJointsWithinHalfMm) {
  thn::SynthSpec spec;
  spec.rng_seed = 21;
  for (int i = 0; i < 8; ++i) {
    const thn::DepthFrame f = thn::generate_frame(spec, i);
    CropSpec crop;
    crop.center_xyz = thn::joint_centroid(f);
    crop.out_size = 48;
    const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
    const std::vector<Vec3> back = thn::uncrop_pose(nc.joints_uvd_norm, crop, f.intrinsics);
    for (std::size_t j = 0; j < back.size(); ++j)
      EXPECT_LT(thn::joint_distance(back[j], f.joints_xyz[j]), 0.5)
          << "frame " << i << " joint " << j;
  }
}

TEST(Crop, UvMappingIsAffine) {
  // collinear points stay collinear in crop coordinates
  thn::DepthFrame f = flat_frame(320, 320, 500.0f);
  for (double t : {0.0, 0.35, 1.0})
    f.joints_xyz.push_back({-40 + t * 90, 10 + t * 50, 500});
  CropSpec crop;
  crop.center_xyz = {0, 0, 500};
  crop.out_size = 128;
  const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
  const auto& j = nc.joints_uvd_norm;
  const double cross = (j[1][0] - j[0][0]) * (j[2][1] - j[0][1]) - (j[1][1] - j[0][1]) * (j[2][0] - j[0][0]);
  EXPECT_NEAR(cross, 0.0, 1e-6);
}

TEST(Crop, BackgroundPixelsExactlyPlusOne) {
  thn::SynthSpec spec;
  spec.rng_seed = 8;
  const thn::DepthFrame f = thn::generate_frame(spec, 0);
  CropSpec crop;
  crop.center_xyz = thn::joint_centroid(f);
  crop.out_size = 48;
  const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
  int background = 0;
  for (float px : nc.image) {
    EXPECT_GE(px, -1.0f);
    EXPECT_LE(px, 1.0f);
    if (px == float(thn::kBackground)) ++background;
  }
  EXPECT_GT(background, 0);
}

}  // namespace
