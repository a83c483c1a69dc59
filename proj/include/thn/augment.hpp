#pragma once

#include <algorithm>
#include <cmath>

#include "thn/camera.hpp"
#include "thn/rng.hpp"

namespace thn {

struct AugmentConfig {
  bool enabled = true;
  double alpha = 0.15;              // PixDropout intensity
  double rot_deg_lo = -180, rot_deg_hi = 180;
  double scale_lo = 0.9, scale_hi = 1.1;
  double trans_mm_lo = -8, trans_mm_hi = 8;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(alpha >= 0 && alpha <= 1, "augment: alpha must be in [0,1]");
    require(rot_deg_lo <= rot_deg_hi && scale_lo <= scale_hi && trans_mm_lo <= trans_mm_hi,
            "augment: ranges must be ordered");
  }
};

// Drops each hand pixel (value != background) with probability gamma,
// replacing it by the background constant. Labels are untouched.
inline void pixdropout_fixed(NormalizedCrop& crop, double gamma, Rng& rng) {
  if (gamma <= 0) return;
  for (float& px : crop.image) {
    if (px == float(kBackground)) continue;
    if (rng.uniform() < gamma) px = float(kBackground);
  }
}

// gamma ~ Uniform[0, alpha], then fixed-gamma dropout.
inline void pixdropout(NormalizedCrop& crop, double alpha, Rng& rng) {
  require(alpha >= 0 && alpha <= 1, "pixdropout: alpha must be in [0,1]");
  if (alpha == 0) return;
  const double gamma = rng.uniform(0.0, alpha);
  pixdropout_fixed(crop, gamma, rng);
}

struct GeometricParams {
  double rot_deg = 0;
  double scale = 1;
  Vec3 trans_mm{0, 0, 0};
};

inline GeometricParams sample_geometric(const AugmentConfig& cfg, Rng& rng) {
  GeometricParams p;
  p.rot_deg = rng.uniform(cfg.rot_deg_lo, cfg.rot_deg_hi);
  p.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  for (int i = 0; i < 3; ++i) p.trans_mm[i] = rng.uniform(cfg.trans_mm_lo, cfg.trans_mm_hi);
  return p;
}

// In-plane rotation about the crop center ((n-1)/2, (n-1)/2), scale, and
// translation, applied identically to the image (nearest-neighbor, vacated
// pixels = background) and the joint labels. Depth values and labels are
// scaled and shifted consistently with the 3D interpretation.
inline NormalizedCrop apply_geometric(const NormalizedCrop& in, const GeometricParams& p) {
  const int n = in.out_size;
  const double c = (n - 1) / 2.0;
  const double th = p.rot_deg * M_PI / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double s = p.scale;
  // crop pixels per mm at the cube center depth
  const double px_per_mm = n / (2.0 * in.crop.cube_mm);
  const double tu = p.trans_mm[0] * px_per_mm;
  const double tv = p.trans_mm[1] * px_per_mm;
  const double tz = p.trans_mm[2] / in.crop.cube_mm;  // normalized depth units

  const bool identity = p.rot_deg == 0 && s == 1 && p.trans_mm[0] == 0 && p.trans_mm[1] == 0 && p.trans_mm[2] == 0;

  NormalizedCrop out = in;
  if (!identity) {
    std::fill(out.image.begin(), out.image.end(), float(kBackground));
    for (int v = 0; v < n; ++v) {
      for (int u = 0; u < n; ++u) {
        // inverse map: undo translation, scale, rotation
        const double du = (u - c - tu) / s;
        const double dv = (v - c - tv) / s;
        const double su = c + ct * du + st * dv;
        const double sv = c - st * du + ct * dv;
        const int iu = static_cast<int>(std::lround(su));
        const int iv = static_cast<int>(std::lround(sv));
        if (iu < 0 || iu >= n || iv < 0 || iv >= n) continue;
        const float val = in.at(iv, iu);
        if (val == float(kBackground)) continue;
        out.at(v, u) = static_cast<float>(std::clamp(double(val) * s + tz, -1.0, 1.0));
      }
    }
    for (Vec3& q : out.joints_uvd_norm) {
      const double du = q[0] - c, dv = q[1] - c;
      q[0] = c + s * (ct * du - st * dv) + tu;
      q[1] = c + s * (st * du + ct * dv) + tv;
      q[2] = std::clamp(q[2] * s + tz, -1.0, 1.0);
    }
  }
  return out;
}

// Geometric transform first, then PixDropout on the resulting surface.
inline NormalizedCrop geometric_augment(const NormalizedCrop& crop, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  return apply_geometric(crop, sample_geometric(cfg, rng));
}

inline NormalizedCrop augment_sample(const NormalizedCrop& crop, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!cfg.enabled) return crop;
  NormalizedCrop out = geometric_augment(crop, cfg, rng);
  pixdropout(out, cfg.alpha, rng);
  return out;
}

}  // namespace thn
