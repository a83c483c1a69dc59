#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "thn/camera.hpp"
#include "thn/rng.hpp"

namespace thn {

struct SynthSpec {
  int n_joints = 14;  // up to 22 (palm, wrist, 5x tip, 5x base, 5x mid1, 5x mid2)
  int n_frames = 16;
  int width = 96, height = 96;
  double fx = 240, fy = 240;
  std::uint64_t rng_seed = 1;
  int n_subjects = 9;
  double center_z_lo = 550, center_z_hi = 650;   // mm
  double global_rot_deg = 40;                    // per-axis range, +-
  double max_curl_deg = 55;                      // finger articulation
  double depth_jitter_mm = 0;                    // optional uniform sensor jitter

  void validate() const {
    require(n_joints >= 1 && n_joints <= 22, "synth: n_joints must be in [1,22]");
    require(n_frames >= 1 && width >= 32 && height >= 32, "synth: bad frame geometry");
    require(n_subjects >= 1, "synth: n_subjects must be >= 1");
  }

  CameraIntrinsics intrinsics() const {
    return CameraIntrinsics{fx, fy, (width - 1) / 2.0, (height - 1) / 2.0};
  }
};

namespace detail {

struct Sphere {
  Vec3 c;
  double r;
};

inline Vec3 rot_euler(const Vec3& p, double ax, double ay, double az) {
  // Z then Y then X, radians
  double x = p[0], y = p[1], z = p[2];
  {
    const double c = std::cos(az), s = std::sin(az);
    const double nx = c * x - s * y, ny = s * x + c * y;
    x = nx; y = ny;
  }
  {
    const double c = std::cos(ay), s = std::sin(ay);
    const double nx = c * x + s * z, nz = -s * x + c * z;
    x = nx; z = nz;
  }
  {
    const double c = std::cos(ax), s = std::sin(ax);
    const double ny = c * y - s * z, nz = s * y + c * z;
    y = ny; z = nz;
  }
  return {x, y, z};
}

}  // namespace detail

// Joint radii used by the renderer, indexed like joints_xyz.
struct SynthFrameInfo {
  std::vector<double> joint_radius;
};

// Renders a blobby articulated hand (palm disc + 5 capsule finger chains)
// by z-buffer rasterization of spheres. Deterministic in (seed, index).
inline DepthFrame generate_frame(const SynthSpec& spec, int index, SynthFrameInfo* info = nullptr) {
  spec.validate();
  Rng rng = Rng::for_index(spec.rng_seed, static_cast<std::uint64_t>(index));
  const CameraIntrinsics k = spec.intrinsics();

  // local model, mm; y grows downward in image space, fingers point up (-y)
  const double hand_scale = rng.uniform(0.9, 1.1);
  const double deg = M_PI / 180.0;
  const double ax = rng.uniform(-spec.global_rot_deg, spec.global_rot_deg) * deg;
  const double ay = rng.uniform(-spec.global_rot_deg, spec.global_rot_deg) * deg;
  const double az = rng.uniform(-180.0, 180.0) * deg;
  const double cz = rng.uniform(spec.center_z_lo, spec.center_z_hi);
  const Vec3 center{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), cz};

  auto place = [&](const Vec3& local) -> Vec3 {
    Vec3 p = detail::rot_euler({local[0] * hand_scale, local[1] * hand_scale, local[2] * hand_scale}, ax, ay, az);
    return {p[0] + center[0], p[1] + center[1], p[2] + center[2]};
  };

  std::vector<detail::Sphere> spheres;
  auto capsule = [&](const Vec3& a, const Vec3& b, double r) {
    const int steps = 8;
    for (int i = 0; i <= steps; ++i) {
      const double t = double(i) / steps;
      spheres.push_back({{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])}, r});
    }
  };

  // palm disc
  const Vec3 palm_local{0, 5, 0};
  for (double px : {-12.0, 0.0, 12.0})
    for (double py : {-8.0, 4.0, 16.0}) spheres.push_back({place({px, py, 0}), 15 * hand_scale});
  const Vec3 wrist_local{0, 34, 0};
  capsule(place({0, 20, 0}), place(wrist_local), 16 * hand_scale);

  // fingers: chains of 3 segments; thumb shorter and splayed
  struct Chain {
    Vec3 base, mid1, mid2, tip;
    double r;
  };
  std::vector<Chain> chains;
  const double base_x[5] = {-26, -13, 0, 12, 24};
  const double lengths[5][3] = {{20, 14, 11}, {24, 16, 12}, {26, 17, 13}, {24, 16, 12}, {19, 13, 10}};
  for (int f = 0; f < 5; ++f) {
    const double splay = (f == 0 ? -35.0 : (base_x[f] / 26.0) * 8.0) * deg;
    const double curl = rng.uniform(0.0, spec.max_curl_deg) * deg;
    Chain ch;
    ch.r = (6.5 - 0.4 * std::abs(f - 2)) * hand_scale;
    Vec3 p{base_x[f], -16, 0};
    ch.base = place(p);
    // direction in the local x-y plane, curling out of plane (+z) per segment
    double dir_y = -1, dir_z = 0;
    const double sx = std::sin(splay), cxp = std::cos(splay);
    Vec3 pts[3];
    double bend = 0;
    for (int s = 0; s < 3; ++s) {
      bend += curl * (s == 0 ? 0.6 : 0.8);
      dir_y = -std::cos(bend);
      dir_z = std::sin(bend);
      const double len = lengths[f][s];
      p = {p[0] + len * (sx * -dir_y), p[1] + len * (cxp * dir_y), p[2] + len * dir_z};
      pts[s] = place(p);
    }
    ch.mid1 = pts[0];
    ch.mid2 = pts[1];
    ch.tip = pts[2];
    capsule(ch.base, ch.mid1, ch.r);
    capsule(ch.mid1, ch.mid2, ch.r * 0.9);
    capsule(ch.mid2, ch.tip, ch.r * 0.8);
    chains.push_back(ch);
  }

  // joint ordering: palm, wrist, tips, bases, mid1s, mid2s
  std::vector<Vec3> all_joints{place(palm_local), place(wrist_local)};
  std::vector<double> all_radii{15 * hand_scale, 16 * hand_scale};
  for (const auto& ch : chains) { all_joints.push_back(ch.tip); all_radii.push_back(ch.r * 0.8); }
  for (const auto& ch : chains) { all_joints.push_back(ch.base); all_radii.push_back(ch.r); }
  for (const auto& ch : chains) { all_joints.push_back(ch.mid1); all_radii.push_back(ch.r * 0.9); }
  for (const auto& ch : chains) { all_joints.push_back(ch.mid2); all_radii.push_back(ch.r * 0.8); }

  DepthFrame frame;
  frame.width = spec.width;
  frame.height = spec.height;
  frame.intrinsics = k;
  frame.depth.assign(static_cast<std::size_t>(spec.width) * spec.height, 0.0f);
  frame.subject = "s" + std::to_string(index % spec.n_subjects);
  frame.id = "frame_" + std::to_string(index);

  // z-buffer sphere rasterization; rays through integer pixel coordinates
  for (const auto& sp : spheres) {
    const Vec3 c_uvd = xyz_to_uvd(sp.c, k);
    const int margin = static_cast<int>(std::ceil(sp.r * std::max(k.fx, k.fy) / (sp.c[2] - sp.r))) + 1;
    const int u0 = std::max(0, static_cast<int>(c_uvd[0]) - margin);
    const int u1 = std::min(spec.width - 1, static_cast<int>(c_uvd[0]) + margin);
    const int v0 = std::max(0, static_cast<int>(c_uvd[1]) - margin);
    const int v1 = std::min(spec.height - 1, static_cast<int>(c_uvd[1]) + margin);
    for (int v = v0; v <= v1; ++v) {
      for (int u = u0; u <= u1; ++u) {
        // ray o=0, d = ((u-cx)/fx, (v-cy)/fy, 1)
        const double dx = (u - k.cx) / k.fx, dy = (v - k.cy) / k.fy;
        const double dd = dx * dx + dy * dy + 1.0;
        const double oc = dx * sp.c[0] + dy * sp.c[1] + sp.c[2];
        const double disc = oc * oc - dd * (sp.c[0] * sp.c[0] + sp.c[1] * sp.c[1] + sp.c[2] * sp.c[2] - sp.r * sp.r);
        if (disc < 0) continue;
        const double t = (oc - std::sqrt(disc)) / dd;
        if (t <= 0) continue;
        const float z = static_cast<float>(t);  // z of surface point (d_z = 1)
        float& px = frame.depth[static_cast<std::size_t>(v) * spec.width + u];
        if (px == 0.0f || z < px) px = z;
      }
    }
  }

  if (spec.depth_jitter_mm > 0) {
    for (float& px : frame.depth)
      if (px > 0) px += static_cast<float>(rng.uniform(-spec.depth_jitter_mm, spec.depth_jitter_mm));
  }

  frame.joints_xyz.assign(all_joints.begin(), all_joints.begin() + spec.n_joints);
  for (const Vec3& p : frame.joints_xyz) frame.joints_uvd.push_back(xyz_to_uvd(p, k));
  if (info) info->joint_radius.assign(all_radii.begin(), all_radii.begin() + spec.n_joints);
  return frame;
}

// Ground-truth crop center: centroid of the labeled joints.
inline Vec3 joint_centroid(const DepthFrame& frame) {
  Vec3 c{0, 0, 0};
  for (const Vec3& p : frame.joints_xyz)
    for (int i = 0; i < 3; ++i) c[i] += p[i];
  for (int i = 0; i < 3; ++i) c[i] /= double(frame.joints_xyz.size());
  return c;
}

// ---- dataset container (JSON-lines manifest + raw .f32 rasters) ----

struct ManifestEntry {
  std::string id;
  std::string depth_file;  // relative to the manifest directory
  int height = 0, width = 0;
  CameraIntrinsics intrinsics;
  std::vector<Vec3> joints_xyz;
  std::string subject;
};

inline void write_raster_f32(const std::string& path, const std::vector<float>& depth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot write " + path);
  out.write(reinterpret_cast<const char*>(depth.data()), static_cast<std::streamsize>(depth.size() * 4));
  if (!out) throw std::runtime_error("dataset: write failed: " + path);
}

inline void write_dataset(const std::string& dir, const std::vector<DepthFrame>& frames) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw std::runtime_error("dataset: cannot write manifest in " + dir);
  for (const auto& f : frames) {
    const std::string depth_file = f.id + ".f32";
    write_raster_f32((fs::path(dir) / depth_file).string(), f.depth);
    nlohmann::json j;
    j["id"] = f.id;
    j["depth_file"] = depth_file;
    j["H"] = f.height;
    j["W"] = f.width;
    j["fx"] = f.intrinsics.fx;
    j["fy"] = f.intrinsics.fy;
    j["cx"] = f.intrinsics.cx;
    j["cy"] = f.intrinsics.cy;
    auto joints = nlohmann::json::array();
    for (const Vec3& p : f.joints_xyz) joints.push_back({p[0], p[1], p[2]});
    j["joints_xyz"] = joints;
    if (!f.subject.empty()) j["subject"] = f.subject;
    manifest << j.dump() << '\n';
  }
}

inline std::vector<ManifestEntry> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("dataset: cannot open manifest: " + manifest_path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  std::size_t joint_count = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.depth_file = j.at("depth_file").get<std::string>();
      e.height = j.at("H").get<int>();
      e.width = j.at("W").get<int>();
      e.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                      j.at("cy").get<double>()};
      for (const auto& p : j.at("joints_xyz")) e.joints_xyz.push_back({p.at(0), p.at(1), p.at(2)});
      if (j.contains("subject")) e.subject = j["subject"].get<std::string>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("dataset: malformed manifest record at line " + std::to_string(line_no) +
                               ": " + ex.what());
    }
    if (entries.size() == 1) joint_count = entries.back().joints_xyz.size();
    else if (entries.back().joints_xyz.size() != joint_count)
      throw std::runtime_error("dataset: inconsistent joint count at line " + std::to_string(line_no));
  }
  if (entries.empty()) throw std::runtime_error("dataset: empty manifest: " + manifest_path);
  return entries;
}

inline DepthFrame load_frame(const ManifestEntry& e, const std::string& manifest_dir) {
  namespace fs = std::filesystem;
  DepthFrame f;
  f.id = e.id;
  f.subject = e.subject;
  f.height = e.height;
  f.width = e.width;
  f.intrinsics = e.intrinsics;
  f.joints_xyz = e.joints_xyz;
  for (const Vec3& p : e.joints_xyz) f.joints_uvd.push_back(xyz_to_uvd(p, e.intrinsics));

  const fs::path path = fs::path(manifest_dir) / e.depth_file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: missing depth file for frame " + e.id + ": " + path.string());
  const std::size_t expect = static_cast<std::size_t>(e.height) * e.width;
  f.depth.resize(expect);
  in.read(reinterpret_cast<char*>(f.depth.data()), static_cast<std::streamsize>(expect * 4));
  if (static_cast<std::size_t>(in.gcount()) != expect * 4 || in.peek() != EOF)
    throw std::runtime_error("dataset: depth file size mismatch for frame " + e.id);
  for (float d : f.depth)
    if (d < 0) throw std::runtime_error("dataset: negative depth in frame " + e.id);
  return f;
}

// Streaming loader: parses the manifest eagerly, reads rasters on demand.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& manifest_path)
      : dir_(std::filesystem::path(manifest_path).parent_path().string()),
        entries_(load_manifest(manifest_path)) {}

  std::size_t size() const { return entries_.size(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  DepthFrame frame(std::size_t i) const { return load_frame(entries_.at(i), dir_); }

  std::vector<DepthFrame> load_all() const {
    std::vector<DepthFrame> out;
    out.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(frame(i));
    return out;
  }

 private:
  std::string dir_;
  std::vector<ManifestEntry> entries_;
};

template <class FrameLike>
std::pair<std::vector<FrameLike>, std::vector<FrameLike>> split_by_subject(
    const std::vector<FrameLike>& frames, const std::string& held_out_subject) {
  std::pair<std::vector<FrameLike>, std::vector<FrameLike>> out;
  for (const auto& f : frames) {
    if (f.subject.empty())
      throw std::invalid_argument("split_by_subject: frames lack subject labels");
    (f.subject == held_out_subject ? out.second : out.first).push_back(f);
  }
  return out;
}

}  // namespace thn
