// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "thn/augment.hpp"
#include "thn/camera.hpp"
#include "thn/metrics.hpp"
#include "thn/net.hpp"
#include "thn/rng.hpp"
#include "thn/synth.hpp"
#include "thn/train.hpp"

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int idx, const std::string& what, bool ok, const std::string& detail) {
  std::printf("criterion %d [%s] %s (%s)\n", idx, ok ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "thn_acceptance";
  fs::create_directories(dir);
  return dir;
}

thn::ModelConfig toy_model_config() {
  thn::ModelConfig mc;
  mc.num_joints = 1;
  mc.input_size = 16;
  mc.base_channels = 4;
  mc.feature_channels = 8;
  mc.head_channels = 4;
  mc.depth_features = 8;
  return mc;
}

// 1: analytic gradients of the total loss vs central differences on the
// 1-joint 16x16 network, 64-bit, step 1e-5, all parameters, under 2 minutes.
void criterion_1() {
  const auto t0 = Clock::now();
  using Real = double;
  const thn::ModelConfig mc = toy_model_config();
  thn::Model<Real> model = thn::Model<Real>::init(mc, 10);
  thn::Rng rng(109);
  auto image = thn::make_tensor<Real>({1, mc.input_size, mc.input_size});
  for (auto& x : image->v) x = rng.uniform(-1.0, 1.0);
  thn::Labels<Real> labels;
  labels.uv_feature = thn::make_tensor<Real>({1, 2});
  labels.z_norm = thn::make_tensor<Real>({1});
  for (auto& x : labels.uv_feature->v) x = rng.uniform(1.0, mc.input_size / 2.0 - 1.0);
  for (auto& x : labels.z_norm->v) x = rng.uniform(-0.5, 0.5);

  auto loss_at = [&]() {
    thn::Tape<Real> tape;
    return thn::forward(tape, model, image, &labels, 1.0).loss->v[0];
  };
  {
    thn::Tape<Real> tape;
    auto r = thn::forward(tape, model, image, &labels, 1.0);
    model.zero_grad();
    tape.backward(r.loss);
  }
  const double step = 1e-5;
  double worst = 0;
  for (auto& [name, p] : model.params()) {
    for (std::size_t i = 0; i < p->v.size(); ++i) {
      const Real saved = p->v[i];
      p->v[i] = saved + step;
      const double fp = loss_at();
      p->v[i] = saved - step;
      const double fm = loss_at();
      p->v[i] = saved;
      const double central = (fp - fm) / (2 * step);
      const double a = p->g[i];
      worst = std::max(worst, std::abs(a - central) / std::max(1.0, std::max(std::abs(a), std::abs(central))));
    }
  }
  const double dt = seconds_since(t0);
  std::ostringstream d;
  d << "max_rel_error " << worst << ", " << dt << "s";
  report(1, "gradient fidelity on the toy network", worst < 1e-4 && dt < 120.0, d.str());
}

// 2: heatmaps and fused attention sum to 1 +- 1e-6, entries >= 0, over 100
// random inputs.
void criterion_2() {
  thn::ModelConfig mc = toy_model_config();
  mc.num_joints = 3;
  thn::Model<double> model = thn::Model<double>::init(mc, 4);
  thn::Rng rng(55);
  double worst_sum = 0, min_entry = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto image = thn::make_tensor<double>({1, mc.input_size, mc.input_size});
    for (auto& x : image->v) x = rng.uniform(-1.0, 1.0);
    thn::Tape<double> tape;
    auto r = thn::forward(tape, model, image);
    const int hw = mc.feature_size() * mc.feature_size();
    for (auto& maps : {r.heatmaps, r.att_fused}) {
      for (int j = 0; j < mc.num_joints; ++j) {
        double s = 0;
        for (int i = 0; i < hw; ++i) {
          s += maps->v[j * hw + i];
          min_entry = std::min(min_entry, maps->v[j * hw + i]);
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  std::ostringstream d;
  d << "worst |sum-1| " << worst_sum << ", min entry " << min_entry;
  report(2, "normalization invariants over 100 random inputs", worst_sum <= 1e-6 && min_entry >= 0.0, d.str());
}

// 3: closed-form examples for the softmax, integration, losses, fusion,
// pooling, shared depth head and dropout identity cases.
void criterion_3() {
  bool ok = true;
  std::string first_bad;
  auto check = [&](const std::string& what, double got, double want, double tol = 1e-9) {
    if (std::abs(got - want) > tol) {
      ok = false;
      if (first_bad.empty()) first_bad = what;
    }
  };

  thn::Tape<double> t;

  auto sm = t.spatial_softmax(
      thn::make_tensor<double>({1, 2, 2}, {0.0, std::log(2.0), std::log(3.0), std::log(4.0)}));
  check("softmax[0]", sm->v[0], 0.1);
  check("softmax[1]", sm->v[1], 0.2);
  check("softmax[2]", sm->v[2], 0.3);
  check("softmax[3]", sm->v[3], 0.4);

  auto delta = thn::make_tensor<double>({1, 4, 4});
  delta->v[1 * 4 + 2] = 1.0;
  auto uv = t.integrate_uv(delta);
  check("integrate delta u", uv->v[0], 2.0);
  check("integrate delta v", uv->v[1], 1.0);
  auto uniform = thn::make_tensor<double>({1, 3, 5});
  std::fill(uniform->v.begin(), uniform->v.end(), 1.0 / 15.0);
  auto c = t.integrate_uv(uniform);
  check("integrate uniform u", c->v[0], 2.0);
  check("integrate uniform v", c->v[1], 1.0);
  auto two = t.integrate_uv(thn::make_tensor<double>({1, 1, 2}, {0.25, 0.75}));
  check("integrate two-point", two->v[0], 0.75);

  auto luv = t.loss_uv(thn::make_tensor<double>({2, 2}, {1, 2, 4, 6}),
                       thn::make_tensor<double>({2, 2}, {0, 2, 2, 9}));
  check("uv loss", luv->v[0], 1.5);
  auto ld = t.loss_depth(thn::make_tensor<double>({2}, {0.5, -0.5}),
                         thn::make_tensor<double>({2}, {0.0, 0.5}));
  check("depth loss", ld->v[0], 0.75);
  check("total loss", t.total_loss(luv, ld, 0.5)->v[0], 1.875);

  auto a = thn::make_tensor<double>({1, 2, 2}, {0.4, 0.4, 0.1, 0.1});
  auto b = thn::make_tensor<double>({1, 2, 2}, {0.4, 0.0, 0.3, 0.3});
  auto mix = t.convex_combine(a, b, thn::make_tensor<double>({1}, std::vector<double>{0.5}));
  check("fusion mix[1]", mix->v[1], 0.2);
  check("fusion mix[2]", mix->v[2], 0.2);
  auto all_a = t.convex_combine(a, b, thn::make_tensor<double>({1}, std::vector<double>{1.0}));
  auto all_b = t.convex_combine(a, b, thn::make_tensor<double>({1}, std::vector<double>{0.0}));
  for (int i = 0; i < 4; ++i) {
    check("fusion beta=1", all_a->v[i], a->v[i]);
    check("fusion beta=0", all_b->v[i], b->v[i]);
  }

  auto att = thn::make_tensor<double>({3, 1, 2}, {1, 0, 0.5, 0.5, 0.25, 0.75});
  auto dmap = thn::make_tensor<double>({2, 1, 2}, {1, 3, 10, 20});
  auto pooled = t.pool_features(att, dmap);
  check("pool select", pooled->v[0], 1.0);
  check("pool mean", pooled->v[2], 2.0);
  check("pool 0.25/0.75", pooled->v[5], 0.25 * 10 + 0.75 * 20);

  auto z = t.joint_linear(thn::make_tensor<double>({2, 2}, {0.5, -1.0, 0.5, -1.0}),
                          thn::make_tensor<double>({2}, {2.0, 3.0}),
                          thn::make_tensor<double>({1}, std::vector<double>{0.1}));
  check("shared head dot", z->v[0], -1.9);
  check("shared head equality", z->v[1], z->v[0]);

  {
    thn::NormalizedCrop crop;
    crop.out_size = 8;
    crop.image.assign(64, -0.3f);
    crop.joints_uvd_norm = {{3, 3, 0}};
    thn::NormalizedCrop out = crop;
    thn::Rng rng(2);
    thn::pixdropout(out, 0.0, rng);
    if (out.image != crop.image) { ok = false; if (first_bad.empty()) first_bad = "dropout alpha=0"; }
    thn::NormalizedCrop bg;
    bg.out_size = 8;
    bg.image.assign(64, float(thn::kBackground));
    thn::NormalizedCrop bg_out = bg;
    thn::pixdropout_fixed(bg_out, 1.0, rng);
    if (bg_out.image != bg.image) { ok = false; if (first_bad.empty()) first_bad = "dropout background"; }
  }

  report(3, "closed-form equation checks", ok, ok ? "all within 1e-9" : "first failure: " + first_bad);
}

// 4: fixed gamma = 0.3 on a crop with exactly 1000 hand pixels, 10000 trials.
void criterion_4() {
  thn::NormalizedCrop crop;
  crop.out_size = 64;
  crop.image.assign(4096, float(thn::kBackground));
  thn::Rng placer(77);
  std::size_t placed = 0;
  while (placed < 1000) {
    const std::size_t i = placer.uniform_index(4096);
    if (crop.image[i] == float(thn::kBackground)) {
      crop.image[i] = -0.2f + 0.0001f * float(placed % 100);
      ++placed;
    }
  }
  crop.joints_uvd_norm = {{31.5, 31.5, -0.1}, {10.0, 50.0, 0.2}};

  thn::Rng rng(31);
  double mean = 0;
  bool bits_ok = true;
  for (int trial = 0; trial < 10000; ++trial) {
    thn::NormalizedCrop out = crop;
    thn::pixdropout_fixed(out, 0.3, rng);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < crop.image.size(); ++i) {
      if (crop.image[i] == float(thn::kBackground)) {
        if (out.image[i] != crop.image[i]) bits_ok = false;
      } else if (out.image[i] == float(thn::kBackground)) {
        ++dropped;
      } else if (out.image[i] != crop.image[i]) {
        bits_ok = false;
      }
    }
    for (std::size_t j = 0; j < crop.joints_uvd_norm.size(); ++j)
      for (int k = 0; k < 3; ++k)
        if (out.joints_uvd_norm[j][k] != crop.joints_uvd_norm[j][k]) bits_ok = false;
    mean += double(dropped) / 1000.0;
  }
  mean /= 10000.0;
  std::ostringstream d;
  d << "mean dropped fraction " << mean << (bits_ok ? "" : ", background/label bits changed");
  report(4, "dropout statistics, 1000 hand pixels x 10000 trials",
         std::abs(mean - 0.3) <= 0.002 && bits_ok, d.str());
}

// 5: memorize 16 synthetic frames within 2000 optimizer steps: mean UV error
// < 1 crop pixel and mean normalized-depth error < 0.02, under 15 minutes.
void criterion_5() {
  const auto t0 = Clock::now();
  thn::SynthSpec spec;
  spec.rng_seed = 71;
  std::vector<thn::DepthFrame> frames;
  for (int i = 0; i < 16; ++i) frames.push_back(thn::generate_frame(spec, i));

  thn::TrainConfig cfg = thn::TrainConfig::overfit_preset();
  cfg.seed = 5;
  thn::Trainer<float> trainer(cfg, frames);

  // ground-truth crops for the error measurements
  std::vector<thn::NormalizedCrop> crops;
  for (const auto& f : frames) {
    thn::CropSpec crop;
    crop.center_xyz = thn::joint_centroid(f);
    crop.cube_mm = cfg.cube_mm;
    crop.out_size = cfg.model.input_size;
    crops.push_back(thn::crop_and_normalize(f, crop));
  }
  auto training_errors = [&]() {
    double uv_err = 0, z_err = 0;
    std::size_t n = 0;
    for (const auto& nc : crops) {
      auto image = thn::make_tensor<float>({1, nc.out_size, nc.out_size});
      for (std::size_t i = 0; i < nc.image.size(); ++i) image->v[i] = nc.image[i];
      thn::Tape<float> tape;
      auto r = thn::forward(tape, trainer.model(), image);
      const auto pose = r.pose_uvd_crop();
      for (std::size_t j = 0; j < pose.size(); ++j) {
        const double du = pose[j][0] - nc.joints_uvd_norm[j][0];
        const double dv = pose[j][1] - nc.joints_uvd_norm[j][1];
        uv_err += std::sqrt(du * du + dv * dv);
        z_err += std::abs(pose[j][2] - nc.joints_uvd_norm[j][2]);
        ++n;
      }
    }
    return std::make_pair(uv_err / double(n), z_err / double(n));
  };

  double uv = 1e9, dz = 1e9;
  int steps = 0;
  while (trainer.epoch() < cfg.epochs) {
    trainer.run(std::min(cfg.epochs, trainer.epoch() + 100));
    steps = trainer.epoch() * int(trainer.steps_per_epoch());
    std::tie(uv, dz) = training_errors();
    if (uv < 1.0 && dz < 0.02) break;
    if (seconds_since(t0) > 14.5 * 60) break;
  }
  const double dt = seconds_since(t0);
  std::ostringstream d;
  d << "uv " << uv << " px, depth " << dz << " after " << steps << " steps, " << dt << "s";
  report(5, "overfitting oracle on 16 frames", uv < 1.0 && dz < 0.02 && steps <= 2000 && dt < 900.0, d.str());
}

// 6: train 2000 frames for 40 epochs with the default preset; held-out mean
// 3D error < 10 mm on 200 frames; success curve monotone and equal to direct
// enumeration.
void criterion_6() {
  const auto t0 = Clock::now();
  thn::SynthSpec spec;
  spec.rng_seed = 29;
  std::vector<thn::DepthFrame> train, held;
  for (int i = 0; i < 2000; ++i) train.push_back(thn::generate_frame(spec, i));
  for (int i = 2000; i < 2200; ++i) held.push_back(thn::generate_frame(spec, i));

  thn::TrainConfig cfg;
  cfg.seed = 9;
  thn::Trainer<float> trainer(cfg, train);
  trainer.run(cfg.epochs);

  std::vector<thn::PoseXYZ> pred, gt;
  for (const auto& f : held) {
    pred.push_back(thn::predict_pose(trainer.model(), f, cfg.cube_mm));
    gt.push_back(f.joints_xyz);
  }
  const thn::EvalReport rep = thn::evaluate_poses(pred, gt);

  bool monotone = true;
  for (std::size_t i = 1; i < rep.success_curve.size(); ++i)
    if (rep.success_curve[i].second < rep.success_curve[i - 1].second) monotone = false;

  bool matches = true;
  for (const auto& [tau, frac] : rep.success_curve) {
    std::size_t ok = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
      double acc = 0;
      for (std::size_t j = 0; j < pred[f].size(); ++j) acc += thn::joint_distance(pred[f][j], gt[f][j]);
      if (acc / double(pred[f].size()) < tau) ++ok;
    }
    if (frac != double(ok) / double(pred.size())) matches = false;
  }

  std::ostringstream d;
  d << "held-out mean " << rep.mean_error_mm << " mm, final loss " << trainer.history().back().loss << ", "
    << seconds_since(t0) << "s" << (monotone ? "" : ", curve not monotone")
    << (matches ? "" : ", curve != enumeration");
  report(6, "generalization on 200 held-out frames", rep.mean_error_mm < 10.0 && monotone && matches, d.str());
}

// 7: five fusion modes and both encoders all train to finite losses under a
// shared seed, emitting a complete comparative CSV.
void criterion_7() {
  const auto t0 = Clock::now();
  thn::SynthSpec spec;
  spec.rng_seed = 83;
  std::vector<thn::DepthFrame> train, test;
  for (int i = 0; i < 32; ++i) train.push_back(thn::generate_frame(spec, i));
  for (int i = 32; i < 40; ++i) test.push_back(thn::generate_frame(spec, i));

  thn::TrainConfig base;
  base.model.input_size = 16;
  base.model.base_channels = 4;
  base.model.feature_channels = 8;
  base.model.head_channels = 4;
  base.model.depth_features = 8;
  base.model.hourglass_levels = 2;
  base.batch_size = 8;
  base.epochs = 2;
  base.augment.enabled = false;
  base.seed = 17;

  std::vector<thn::AblationRow> rows;
  for (thn::FusionMode m : {thn::FusionMode::fused, thn::FusionMode::fuse_sum, thn::FusionMode::fuse_concat,
                            thn::FusionMode::uv_only, thn::FusionMode::enh_only}) {
    thn::TrainConfig cfg = base;
    cfg.model.fusion = m;
    rows.push_back({"fusion_" + to_string(m), cfg});
  }
  for (thn::EncoderVariant v : {thn::EncoderVariant::hourglass, thn::EncoderVariant::downsample_deconv}) {
    thn::TrainConfig cfg = base;
    cfg.model.encoder = v;
    rows.push_back({"encoder_" + to_string(v), cfg});
  }

  const std::string csv = thn::run_ablation_suite<float>(rows, train, test);
  const fs::path out = scratch_dir() / "ablation.csv";
  std::ofstream(out) << csv;

  bool ok = true;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  int data_rows = 0;
  while (std::getline(is, line)) {
    ++data_rows;
    std::istringstream fields(line);
    std::string cell;
    for (int col = 0; std::getline(fields, cell, ','); ++col)
      if (col == 5 || col == 6)
        if (!std::isfinite(std::stod(cell))) ok = false;
  }
  if (data_rows != int(rows.size())) ok = false;
  for (const auto& row : rows)
    if (csv.find(row.label) == std::string::npos) ok = false;

  std::ostringstream d;
  d << data_rows << " rows -> " << out.string() << ", " << seconds_since(t0) << "s";
  report(7, "ablation harness over fusion modes and encoders", ok, d.str());
}

// 8: crop -> uncrop within 0.5 mm; checkpoint save/load byte-identical;
// same-seed 64-bit training runs loss-trace identical.
void criterion_8() {
  thn::SynthSpec spec;
  spec.rng_seed = 21;
  double worst_mm = 0;
  for (int i = 0; i < 8; ++i) {
    const thn::DepthFrame f = thn::generate_frame(spec, i);
    thn::CropSpec crop;
    crop.center_xyz = thn::joint_centroid(f);
    crop.out_size = 48;
    const thn::NormalizedCrop nc = thn::crop_and_normalize(f, crop);
    const auto back = thn::uncrop_pose(nc.joints_uvd_norm, crop, f.intrinsics);
    for (std::size_t j = 0; j < back.size(); ++j)
      worst_mm = std::max(worst_mm, thn::joint_distance(back[j], f.joints_xyz[j]));
  }

  thn::ModelConfig mc = toy_model_config();
  mc.num_joints = 14;
  auto model = thn::Model<float>::init(mc, 3);
  const fs::path dir = scratch_dir();
  thn::save_model((dir / "rt_a.thn").string(), model, 150.0);
  auto [loaded, cube] = thn::load_model<float>((dir / "rt_a.thn").string());
  thn::save_model((dir / "rt_b.thn").string(), loaded, cube);
  const bool bytes_ok = slurp(dir / "rt_a.thn") == slurp(dir / "rt_b.thn");

  std::vector<thn::DepthFrame> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(thn::generate_frame(spec, i));
  thn::TrainConfig cfg;
  cfg.model = mc;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.augment.enabled = false;
  auto trace = [&]() {
    thn::Trainer<double> t(cfg, frames);
    t.run(cfg.epochs);
    std::vector<double> losses;
    for (const auto& e : t.history()) losses.push_back(e.loss);
    return losses;
  };
  const bool trace_ok = trace() == trace();

  std::ostringstream d;
  d << "worst round trip " << worst_mm << " mm" << (bytes_ok ? "" : ", checkpoint bytes differ")
    << (trace_ok ? "" : ", loss traces differ");
  report(8, "round-trip fidelity and determinism", worst_mm < 0.5 && bytes_ok && trace_ok, d.str());
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", failures);
  return 1;
}
