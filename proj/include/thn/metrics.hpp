#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "thn/camera.hpp"

namespace thn {

using PoseXYZ = std::vector<Vec3>;  // J x mm

inline double joint_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Mean Euclidean distance over all joints and frames, mm.
inline double mean_distance_error(const std::vector<PoseXYZ>& pred, const std::vector<PoseXYZ>& gt) {
  require(pred.size() == gt.size() && !pred.empty(), "mean_distance_error: frame count mismatch");
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    require(pred[f].size() == gt[f].size(), "mean_distance_error: joint count mismatch");
    for (std::size_t j = 0; j < pred[f].size(); ++j) {
      acc += joint_distance(pred[f][j], gt[f][j]);
      ++n;
    }
  }
  return acc / double(n);
}

inline std::vector<double> per_joint_error(const std::vector<PoseXYZ>& pred, const std::vector<PoseXYZ>& gt) {
  require(pred.size() == gt.size() && !pred.empty(), "per_joint_error: frame count mismatch");
  std::vector<double> err(pred[0].size(), 0.0);
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (std::size_t j = 0; j < err.size(); ++j) err[j] += joint_distance(pred[f][j], gt[f][j]);
  for (double& e : err) e /= double(pred.size());
  return err;
}

// Per threshold tau: fraction of frames whose per-frame mean joint error
// is strictly less than tau.
inline std::vector<std::pair<double, double>> success_rate(const std::vector<PoseXYZ>& pred,
                                                           const std::vector<PoseXYZ>& gt,
                                                           const std::vector<double>& thresholds) {
  require(pred.size() == gt.size() && !pred.empty(), "success_rate: frame count mismatch");
  std::vector<double> frame_err;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    double acc = 0;
    for (std::size_t j = 0; j < pred[f].size(); ++j) acc += joint_distance(pred[f][j], gt[f][j]);
    frame_err.push_back(acc / double(pred[f].size()));
  }
  std::vector<std::pair<double, double>> curve;
  for (double tau : thresholds) {
    std::size_t ok = 0;
    for (double e : frame_err)
      if (e < tau) ++ok;
    curve.emplace_back(tau, double(ok) / double(frame_err.size()));
  }
  return curve;
}

struct EvalReport {
  double mean_error_mm = 0;
  std::vector<double> per_joint_error_mm;
  std::vector<std::pair<double, double>> success_curve;
};

inline EvalReport evaluate_poses(const std::vector<PoseXYZ>& pred, const std::vector<PoseXYZ>& gt,
                                 double max_threshold_mm = 80, double step_mm = 1) {
  EvalReport r;
  r.mean_error_mm = mean_distance_error(pred, gt);
  r.per_joint_error_mm = per_joint_error(pred, gt);
  std::vector<double> taus;
  for (double t = step_mm; t <= max_threshold_mm + 1e-12; t += step_mm) taus.push_back(t);
  r.success_curve = success_rate(pred, gt, taus);
  return r;
}

inline void write_eval_csv(const std::string& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("eval: cannot write " + path);
  out << "kind,key,value\n";
  out << "summary,mean_error_mm," << r.mean_error_mm << "\n";
  for (std::size_t j = 0; j < r.per_joint_error_mm.size(); ++j)
    out << "per_joint," << j << "," << r.per_joint_error_mm[j] << "\n";
  for (const auto& [tau, frac] : r.success_curve) out << "success," << tau << "," << frac << "\n";
}

}  // namespace thn
