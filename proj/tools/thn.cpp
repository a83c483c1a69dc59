// Command-line front end: synthetic data generation, training, evaluation,
// prediction, augmentation preview, gradient checking and the ablation grid.
//
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "thn/augment.hpp"
#include "thn/camera.hpp"
#include "thn/metrics.hpp"
#include "thn/net.hpp"
#include "thn/synth.hpp"
#include "thn/train.hpp"

namespace fs = std::filesystem;

namespace {

thn::SynthSpec parse_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw thn::ConfigError("cannot open spec file: " + path);
  thn::SynthSpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = line;
    const auto hash_pos = s.find('#');
    if (hash_pos != std::string::npos) s.erase(hash_pos);
    s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; }), s.end());
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw thn::ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = s.substr(0, eq), val = s.substr(eq + 1);
    try {
      if (key == "n_joints") spec.n_joints = std::stoi(val);
      else if (key == "n_frames") spec.n_frames = std::stoi(val);
      else if (key == "width") spec.width = std::stoi(val);
      else if (key == "height") spec.height = std::stoi(val);
      else if (key == "fx") spec.fx = std::stod(val);
      else if (key == "fy") spec.fy = std::stod(val);
      else if (key == "seed") spec.rng_seed = std::stoull(val);
      else if (key == "n_subjects") spec.n_subjects = std::stoi(val);
      else if (key == "global_rot_deg") spec.global_rot_deg = std::stod(val);
      else if (key == "max_curl_deg") spec.max_curl_deg = std::stod(val);
      else if (key == "depth_jitter_mm") spec.depth_jitter_mm = std::stod(val);
      else throw thn::ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    } catch (const thn::ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw thn::ConfigError(path + ":" + std::to_string(line_no) + ": bad value: " + ex.what());
    }
  }
  try {
    spec.validate();
  } catch (const std::exception& ex) {
    throw thn::ConfigError(path + ": " + ex.what());
  }
  return spec;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed_override,
                 bool has_seed, bool force) {
  thn::SynthSpec spec = parse_synth_spec(spec_path);
  if (has_seed) spec.rng_seed = seed_override;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw thn::ConfigError("output directory exists and is not empty (use --force): " + out_dir);
  std::vector<thn::DepthFrame> frames;
  for (int i = 0; i < spec.n_frames; ++i) frames.push_back(thn::generate_frame(spec, i));
  thn::write_dataset(out_dir, frames);
  std::cout << "wrote " << frames.size() << " frames to " << out_dir << "\n";
  return 0;
}

template <class Real>
int run_train(thn::TrainConfig cfg, const std::string& data_path, const std::string& out_dir,
              const std::string& resume_from) {
  thn::DatasetReader reader(data_path);
  std::vector<thn::DepthFrame> frames = reader.load_all();
  cfg.model.num_joints = int(frames[0].joints_xyz.size());
  fs::create_directories(out_dir);

  std::unique_ptr<thn::Trainer<Real>> trainer;
  if (resume_from.empty()) trainer = std::make_unique<thn::Trainer<Real>>(cfg, frames);
  else trainer = std::make_unique<thn::Trainer<Real>>(cfg, frames, resume_from);

  const std::string last = (fs::path(out_dir) / "last.thn").string();
  while (trainer->epoch() < cfg.epochs) {
    const int until = std::min(cfg.epochs, trainer->epoch() + cfg.checkpoint_every);
    trainer->run(until);
    trainer->save(last);
    thn::write_loss_csv((fs::path(out_dir) / "loss.csv").string(), trainer->history());
    std::cout << "epoch " << (trainer->epoch() - 1) << " loss " << trainer->history().back().loss << "\n";
  }
  thn::save_model((fs::path(out_dir) / "final.thn").string(), trainer->model(), cfg.cube_mm);
  return 0;
}

template <class Real>
int run_eval(const std::string& ckpt, const std::string& data_path, const std::string& report_path) {
  auto [model, cube_mm] = thn::load_model<Real>(ckpt);
  thn::DatasetReader reader(data_path);
  const thn::EvalReport report = thn::evaluate_model(model, reader.load_all(), cube_mm);
  thn::write_eval_csv(report_path, report);
  std::cout << "mean_error_mm " << report.mean_error_mm << "\n";
  return 0;
}

template <class Real>
int run_predict(const std::string& ckpt, const std::string& data_path, const std::string& out_path) {
  auto [model, cube_mm] = thn::load_model<Real>(ckpt);
  thn::DatasetReader reader(data_path);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("predict: cannot write " + out_path);
  out << "frame_id,joint,x_mm,y_mm,z_mm\n";
  for (std::size_t i = 0; i < reader.size(); ++i) {
    const thn::DepthFrame frame = reader.frame(i);
    const thn::PoseXYZ pose = thn::predict_pose(model, frame, cube_mm);
    for (std::size_t j = 0; j < pose.size(); ++j)
      out << frame.id << "," << j << "," << pose[j][0] << "," << pose[j][1] << "," << pose[j][2] << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& size) {
  // 64-bit throughout; finite differences need the headroom.
  using Real = double;
  thn::ModelConfig mc;
  if (size == "toy") {
    mc.num_joints = 1;
    mc.input_size = 16;
    mc.base_channels = 4;
    mc.feature_channels = 8;
    mc.head_channels = 4;
    mc.depth_features = 8;
  } else if (size == "small") {
    mc.num_joints = 4;
    mc.input_size = 32;
    mc.base_channels = 6;
    mc.feature_channels = 12;
    mc.head_channels = 6;
    mc.depth_features = 16;
  } else {
    throw thn::ConfigError("gradcheck: --size must be toy or small");
  }
  thn::Model<Real> model = thn::Model<Real>::init(mc, 10);
  thn::Rng rng(109);
  auto image = thn::make_tensor<Real>({1, mc.input_size, mc.input_size});
  for (auto& x : image->v) x = rng.uniform(-1.0, 1.0);
  thn::Labels<Real> labels;
  labels.uv_feature = thn::make_tensor<Real>({mc.num_joints, 2});
  labels.z_norm = thn::make_tensor<Real>({mc.num_joints});
  for (auto& x : labels.uv_feature->v) x = rng.uniform(1.0, mc.input_size / 2.0 - 1.0);
  for (auto& x : labels.z_norm->v) x = rng.uniform(-0.5, 0.5);

  auto loss_at = [&]() {
    thn::Tape<Real> tape;
    return thn::forward(tape, model, image, &labels, 1.0).loss->v[0];
  };

  const double step = 1e-5;
  double worst = 0;
  std::string worst_param;
  // analytic grads once
  {
    thn::Tape<Real> tape;
    auto r = thn::forward(tape, model, image, &labels, 1.0);
    model.zero_grad();
    tape.backward(r.loss);
  }
  std::vector<std::vector<Real>> analytic;
  for (const auto& [name, p] : model.params()) analytic.push_back(p->g);

  std::size_t pi = 0;
  for (auto& [name, p] : model.params()) {
    double param_worst = 0;
    for (std::size_t i = 0; i < p->v.size(); ++i) {
      const Real saved = p->v[i];
      p->v[i] = saved + step;
      const double fp = loss_at();
      p->v[i] = saved - step;
      const double fm = loss_at();
      p->v[i] = saved;
      const double central = (fp - fm) / (2 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - central) / std::max(1.0, std::max(std::abs(a), std::abs(central)));
      param_worst = std::max(param_worst, rel);
    }
    std::cout << "param " << name << " worst_rel_error " << param_worst << "\n";
    if (param_worst > worst) { worst = param_worst; worst_param = name; }
    ++pi;
  }
  std::cout << "max_rel_error " << worst << " (" << worst_param << ")\n";
  if (worst < 1e-4) {
    std::cout << "PASS\n";
    return 0;
  }
  std::cout << "FAIL\n";
  return 1;
}

int cmd_augment_preview(const std::string& data_path, int n, double alpha, std::uint64_t seed,
                        const std::string& out_dir) {
  thn::DatasetReader reader(data_path);
  fs::create_directories(out_dir);
  thn::AugmentConfig acfg;
  acfg.alpha = alpha;
  double dropped_total = 0, hand_total = 0;
  for (int i = 0; i < n && std::size_t(i) < reader.size(); ++i) {
    const thn::DepthFrame frame = reader.frame(std::size_t(i));
    thn::CropSpec crop;
    crop.center_xyz = thn::joint_centroid(frame);
    crop.out_size = 64;
    const thn::NormalizedCrop raw = thn::crop_and_normalize(frame, crop);
    thn::Rng rng = thn::Rng::for_index(seed, std::uint64_t(i));
    const thn::NormalizedCrop aug = thn::augment_sample(raw, acfg, rng);
    thn::write_raster_f32((fs::path(out_dir) / (frame.id + "_raw.f32")).string(), raw.image);
    thn::write_raster_f32((fs::path(out_dir) / (frame.id + "_aug.f32")).string(), aug.image);
    // dropped fraction measured on a dropout-only pass for the stats line
    thn::Rng rng2 = thn::Rng::for_index(seed ^ 0x5151, std::uint64_t(i));
    thn::NormalizedCrop drop = raw;
    thn::pixdropout(drop, alpha, rng2);
    for (std::size_t px = 0; px < raw.image.size(); ++px) {
      if (raw.image[px] == float(thn::kBackground)) continue;
      hand_total += 1;
      if (drop.image[px] == float(thn::kBackground)) dropped_total += 1;
    }
  }
  std::cout << "dropped_fraction_mean " << (hand_total > 0 ? dropped_total / hand_total : 0.0) << "\n";
  return 0;
}

template <class Real>
int run_ablate(thn::TrainConfig base, const std::string& data_path, const std::string& out_csv,
               const std::string& grid) {
  thn::DatasetReader reader(data_path);
  std::vector<thn::DepthFrame> frames = reader.load_all();
  base.model.num_joints = int(frames[0].joints_xyz.size());
  // fixed 90/10 train/test split by index
  const std::size_t n_test = std::max<std::size_t>(1, frames.size() / 10);
  std::vector<thn::DepthFrame> test(frames.end() - n_test, frames.end());
  frames.resize(frames.size() - n_test);

  std::vector<thn::AblationRow> rows;
  if (grid == "fusion") {
    for (thn::FusionMode m : {thn::FusionMode::fused, thn::FusionMode::fuse_sum, thn::FusionMode::fuse_concat,
                              thn::FusionMode::uv_only, thn::FusionMode::enh_only}) {
      thn::TrainConfig cfg = base;
      cfg.model.fusion = m;
      rows.push_back({to_string(m), cfg});
    }
  } else if (grid == "encoder") {
    for (thn::EncoderVariant v : {thn::EncoderVariant::hourglass, thn::EncoderVariant::downsample_deconv}) {
      thn::TrainConfig cfg = base;
      cfg.model.encoder = v;
      rows.push_back({to_string(v), cfg});
    }
  } else if (grid == "pixdropout") {
    for (thn::ModelKind kind : {thn::ModelKind::trihorn, thn::ModelKind::regression}) {
      for (bool with : {true, false}) {
        thn::TrainConfig cfg = base;
        cfg.model.kind = kind;
        cfg.augment.enabled = true;
        cfg.augment.alpha = with ? cfg.augment.alpha : 0.0;
        rows.push_back({to_string(kind) + (with ? "_pixdropout" : "_plain"), cfg});
      }
    }
  } else {
    throw thn::ConfigError("ablate: --grid must be fusion, encoder or pixdropout");
  }
  const std::string csv = thn::run_ablation_suite<Real>(rows, frames, test);
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw std::runtime_error("ablate: cannot write " + out_csv);
  out << csv;
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TriHorn-style hand pose estimation pipeline"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_path, ckpt_path, report_path, resume_from, grid = "fusion";
  std::string size = "toy", precision = "f32";
  std::uint64_t seed = 0;
  bool force = false;
  int n_preview = 4;
  double alpha = 0.15;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic depth-hand dataset");
  gen->add_option("--spec", spec_path, "synth spec file (key = value)")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "override the spec seed");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "train config file (key = value)")->required();
  train->add_option("--data", data_path, "dataset manifest")->required();
  train->add_option("--out", out_dir, "checkpoint directory")->required();
  train->add_option("--resume", resume_from, "checkpoint to resume from");
  train->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  auto* train_seed = train->add_option("--seed", seed, "override the config seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_path)->required();
  eval->add_option("--report", report_path)->required();
  eval->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  auto* predict = app.add_subcommand("predict", "predict poses for a dataset");
  predict->add_option("--ckpt", ckpt_path)->required();
  predict->add_option("--data", data_path)->required();
  predict->add_option("--out", report_path)->required();
  predict->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full network");
  gradcheck->add_option("--size", size)->check(CLI::IsMember({"toy", "small"}));

  auto* preview = app.add_subcommand("augment-preview", "dump raw/augmented crops and dropout stats");
  preview->add_option("--data", data_path)->required();
  preview->add_option("--out", out_dir)->required();
  preview->add_option("--n", n_preview);
  preview->add_option("--alpha", alpha);
  preview->add_option("--seed", seed);

  auto* ablate = app.add_subcommand("ablate", "train an ablation grid and emit a comparative CSV");
  ablate->add_option("--config", config_path, "base train config")->required();
  ablate->add_option("--data", data_path)->required();
  ablate->add_option("--out", report_path, "output CSV")->required();
  ablate->add_option("--grid", grid)->check(CLI::IsMember({"fusion", "encoder", "pixdropout"}));
  ablate->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir, seed, gen_seed->count() > 0, force);
    if (train->parsed()) {
      thn::TrainConfig cfg = thn::parse_train_config_file(config_path);
      if (train_seed->count() > 0) cfg.seed = seed;
      return precision == "f64" ? run_train<double>(cfg, data_path, out_dir, resume_from)
                                : run_train<float>(cfg, data_path, out_dir, resume_from);
    }
    if (eval->parsed())
      return precision == "f64" ? run_eval<double>(ckpt_path, data_path, report_path)
                                : run_eval<float>(ckpt_path, data_path, report_path);
    if (predict->parsed())
      return precision == "f64" ? run_predict<double>(ckpt_path, data_path, report_path)
                                : run_predict<float>(ckpt_path, data_path, report_path);
    if (gradcheck->parsed()) return cmd_gradcheck(size);
    if (preview->parsed()) return cmd_augment_preview(data_path, n_preview, alpha, seed, out_dir);
    if (ablate->parsed()) {
      thn::TrainConfig cfg = thn::parse_train_config_file(config_path);
      return precision == "f64" ? run_ablate<double>(cfg, data_path, report_path, grid)
                                : run_ablate<float>(cfg, data_path, report_path, grid);
    }
  } catch (const thn::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
