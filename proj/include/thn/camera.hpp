#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "thn/tensor.hpp"

namespace thn {

using Vec3 = std::array<double, 3>;

struct CameraIntrinsics {
  double fx = 0, fy = 0;  // focal lengths, pixels
  double cx = 0, cy = 0;  // principal point, pixels

  void validate() const { require(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive"); }
};

// Cube in camera-space mm defining the crop window and depth range.
struct CropSpec {
  Vec3 center_xyz{0, 0, 0};  // mm
  double cube_mm = 150;      // half-extent
  int out_size = 128;

  void validate() const {
    require(cube_mm > 0, "crop: cube_mm must be positive");
    require(out_size >= 16, "crop: out_size must be >= 16");
  }
};

// One raw depth raster with intrinsics and ground truth.
// depth is H*W mm values, row-major, 0 = missing.
struct DepthFrame {
  int height = 0, width = 0;
  std::vector<float> depth;
  CameraIntrinsics intrinsics;
  std::vector<Vec3> joints_xyz;  // mm
  std::vector<Vec3> joints_uvd;  // (px, px, mm)
  std::string subject;
  std::string id;

  float at(int v, int u) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

// Value assigned to background / out-of-cube pixels after normalization.
inline constexpr double kBackground = 1.0;

inline Vec3 xyz_to_uvd(const Vec3& p, const CameraIntrinsics& k) {
  k.validate();
  require(p[2] > 0, "xyz_to_uvd: depth must be positive");
  return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy, p[2]};
}

inline Vec3 uvd_to_xyz(const Vec3& q, const CameraIntrinsics& k) {
  k.validate();
  require(q[2] > 0, "uvd_to_xyz: depth must be positive");
  return {(q[0] - k.cx) * q[2] / k.fx, (q[1] - k.cy) * q[2] / k.fy, q[2]};
}

// Pixel window the cube subtends at the cube center's depth.
struct CropWindow {
  double u_min, v_min;      // source-pixel coords of the crop origin
  double su, sv;            // crop pixels per source pixel
  double center_z, cube_mm;

  // source pixel coordinate sampled by crop pixel (uc, vc)
  double src_u(double uc) const { return u_min + (uc + 0.5) / su; }
  double src_v(double vc) const { return v_min + (vc + 0.5) / sv; }
  // crop coordinate of a source pixel coordinate
  double crop_u(double us) const { return (us - u_min) * su - 0.5; }
  double crop_v(double vs) const { return (vs - v_min) * sv - 0.5; }

  double norm_depth(double d_mm) const {
    return (d_mm - center_z) / cube_mm;
  }
  double denorm_depth(double z_norm) const { return center_z + z_norm * cube_mm; }
};

inline CropWindow make_crop_window(const CropSpec& crop, const CameraIntrinsics& k) {
  crop.validate();
  k.validate();
  require(crop.center_xyz[2] > 0, "crop: cube center must have positive depth");
  const Vec3 c_uvd = xyz_to_uvd(crop.center_xyz, k);
  const double ru = k.fx * crop.cube_mm / crop.center_xyz[2];
  const double rv = k.fy * crop.cube_mm / crop.center_xyz[2];
  CropWindow w;
  w.u_min = c_uvd[0] - ru;
  w.v_min = c_uvd[1] - rv;
  w.su = crop.out_size / (2 * ru);
  w.sv = crop.out_size / (2 * rv);
  w.center_z = crop.center_xyz[2];
  w.cube_mm = crop.cube_mm;
  return w;
}

// Network-ready crop: image in [-1,1] with background exactly +1,
// joint UVs in crop-pixel coords, joint depth normalized to [-1,1].
struct NormalizedCrop {
  int out_size = 0;
  std::vector<float> image;      // out_size^2, row-major
  CropSpec crop;
  CameraIntrinsics intrinsics;
  std::vector<Vec3> joints_uvd_norm;

  float at(int v, int u) const { return image[static_cast<std::size_t>(v) * out_size + u]; }
  float& at(int v, int u) { return image[static_cast<std::size_t>(v) * out_size + u]; }
};

inline NormalizedCrop crop_and_normalize(const DepthFrame& frame, const CropSpec& crop) {
  const CropWindow w = make_crop_window(crop, frame.intrinsics);
  const int n = crop.out_size;

  // reject windows fully outside the raster
  const double u_max = w.src_u(n - 1), v_max = w.src_v(n - 1);
  if (u_max < 0 || v_max < 0 || w.src_u(0) >= frame.width || w.src_v(0) >= frame.height)
    throw std::invalid_argument("crop_and_normalize: crop window lies entirely outside the raster");

  NormalizedCrop out;
  out.out_size = n;
  out.crop = crop;
  out.intrinsics = frame.intrinsics;
  out.image.assign(static_cast<std::size_t>(n) * n, float(kBackground));
  for (int vc = 0; vc < n; ++vc) {
    const int sv = static_cast<int>(std::lround(w.src_v(vc)));  // nearest pixel, integer-center convention
    if (sv < 0 || sv >= frame.height) continue;
    for (int uc = 0; uc < n; ++uc) {
      const int su = static_cast<int>(std::lround(w.src_u(uc)));
      if (su < 0 || su >= frame.width) continue;
      const double d = frame.at(sv, su);
      if (d <= 0) continue;  // missing
      const double z = w.norm_depth(d);
      if (z < -1 || z > 1) continue;  // outside cube -> background
      out.at(vc, uc) = static_cast<float>(z);
    }
  }
  for (const Vec3& p : frame.joints_xyz) {
    const Vec3 q = xyz_to_uvd(p, frame.intrinsics);
    const double z = std::clamp(w.norm_depth(q[2]), -1.0, 1.0);
    out.joints_uvd_norm.push_back({w.crop_u(q[0]), w.crop_v(q[1]), z});
  }
  return out;
}

// Inverts the crop's UV mapping and depth normalization, then back-projects.
inline std::vector<Vec3> uncrop_pose(const std::vector<Vec3>& pose_uvd_norm, const CropSpec& crop,
                                     const CameraIntrinsics& k) {
  const CropWindow w = make_crop_window(crop, k);
  std::vector<Vec3> out;
  out.reserve(pose_uvd_norm.size());
  for (const Vec3& q : pose_uvd_norm) {
    const Vec3 uvd{w.src_u(q[0]), w.src_v(q[1]), w.denorm_depth(q[2])};
    out.push_back(uvd_to_xyz(uvd, k));
  }
  return out;
}

}  // namespace thn
