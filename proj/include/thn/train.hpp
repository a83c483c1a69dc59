#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "thn/augment.hpp"
#include "thn/camera.hpp"
#include "thn/checkpoint.hpp"
#include "thn/metrics.hpp"
#include "thn/net.hpp"
#include "thn/synth.hpp"

namespace thn {

// Configuration / usage errors map to CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr0 = 2e-3;
  double weight_decay = 1e-5;
  int epochs = 40;
  int batch_size = 32;
  double lambda = 1.0;
  std::uint64_t seed = 1;
  double cube_mm = 150;
  int checkpoint_every = 1;  // epochs
  AugmentConfig augment;
  ModelConfig model;

  void validate() const {
    require(lr0 > 0 && epochs > 0 && batch_size > 0, "train: lr0, epochs, batch_size must be positive");
    require(lambda >= 0, "train: lambda must be >= 0");
    augment.validate();
    model.validate();
  }

  // Tiny memorization setup used by tests and `train --preset overfit`.
  static TrainConfig overfit_preset() {
    TrainConfig c;
    c.model.input_size = 32;
    c.model.base_channels = 8;
    c.model.feature_channels = 16;
    c.model.head_channels = 8;
    c.model.depth_features = 32;
    c.batch_size = 16;
    c.epochs = 2000;  // one step per epoch on 16 frames
    c.augment.enabled = false;
    c.checkpoint_every = 500;
    return c;
  }

  std::string canonical() const {
    std::ostringstream os;
    os << "lr0=" << lr0 << ";wd=" << weight_decay << ";epochs=" << epochs << ";batch=" << batch_size
       << ";lambda=" << lambda << ";seed=" << seed << ";cube=" << cube_mm
       << ";aug=" << (augment.enabled ? 1 : 0) << ";alpha=" << augment.alpha << ";rot=" << augment.rot_deg_lo
       << ".." << augment.rot_deg_hi << ";scale=" << augment.scale_lo << ".." << augment.scale_hi
       << ";trans=" << augment.trans_mm_lo << ".." << augment.trans_mm_hi << ";kind=" << to_string(model.kind)
       << ";J=" << model.num_joints << ";in=" << model.input_size << ";enc=" << to_string(model.encoder)
       << ";B=" << model.base_channels << ";C=" << model.feature_channels << ";H=" << model.head_channels
       << ";D=" << model.depth_features << ";fusion=" << to_string(model.fusion);
    return os.str();
  }

  std::uint32_t hash() const {
    const std::string s = canonical();
    return crc32(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  }
};

// ---- key = value config files ----

inline TrainConfig parse_train_config(std::istream& in, const std::string& origin = "<config>") {
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + msg + " in line '" + line + "'");
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = line;
    const auto hash_pos = s.find('#');
    if (hash_pos != std::string::npos) s.erase(hash_pos);
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    s.erase(std::remove_if(s.begin(), s.end(), is_space), s.end());
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = s.substr(0, eq), val = s.substr(eq + 1);
    try {
      if (key == "preset") {
        if (val == "overfit") cfg = TrainConfig::overfit_preset();
        else if (val == "default") cfg = TrainConfig{};
        else fail("unknown preset '" + val + "'");
      } else if (key == "lr0") cfg.lr0 = std::stod(val);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
      else if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "batch_size") cfg.batch_size = std::stoi(val);
      else if (key == "lambda") cfg.lambda = std::stod(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "cube_mm") cfg.cube_mm = std::stod(val);
      else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
      else if (key == "augment") cfg.augment.enabled = (val == "on" || val == "true" || val == "1");
      else if (key == "alpha") cfg.augment.alpha = std::stod(val);
      else if (key == "rot_deg_lo") cfg.augment.rot_deg_lo = std::stod(val);
      else if (key == "rot_deg_hi") cfg.augment.rot_deg_hi = std::stod(val);
      else if (key == "scale_lo") cfg.augment.scale_lo = std::stod(val);
      else if (key == "scale_hi") cfg.augment.scale_hi = std::stod(val);
      else if (key == "trans_mm_lo") cfg.augment.trans_mm_lo = std::stod(val);
      else if (key == "trans_mm_hi") cfg.augment.trans_mm_hi = std::stod(val);
      else if (key == "model_kind") cfg.model.kind = parse_model_kind(val);
      else if (key == "num_joints") cfg.model.num_joints = std::stoi(val);
      else if (key == "crop_size") cfg.model.input_size = std::stoi(val);
      else if (key == "encoder") cfg.model.encoder = parse_encoder(val);
      else if (key == "base_channels") cfg.model.base_channels = std::stoi(val);
      else if (key == "feature_channels") cfg.model.feature_channels = std::stoi(val);
      else if (key == "head_channels") cfg.model.head_channels = std::stoi(val);
      else if (key == "depth_features") cfg.model.depth_features = std::stoi(val);
      else if (key == "fusion") cfg.model.fusion = parse_fusion(val);
      else fail("unknown key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      fail(std::string("bad value: ") + ex.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(origin + ": " + ex.what());
  }
  return cfg;
}

inline TrainConfig parse_train_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_train_config(in, path);
}

// ---- optimizer ----

inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
  require(total_steps > 0 && step >= 0 && step <= total_steps, "cosine_lr: bad step range");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

template <class Real>
struct AdamState {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::vector<Real>> m, v;  // indexed like model.params()
  std::int64_t t = 0;

  template <class M>
  static AdamState zeros_like(const M& model) {
    AdamState s;
    for (const auto& [name, p] : model.params()) {
      s.m.emplace_back(p->v.size(), Real(0));
      s.v.emplace_back(p->v.size(), Real(0));
    }
    return s;
  }
};

// Decoupled weight decay (p -= lr*wd*p) followed by the standard
// bias-corrected Adam update.
template <class Real>
void adam_step(Model<Real>& model, AdamState<Real>& state, double lr, double weight_decay) {
  require(state.m.size() == model.params().size(), "adam_step: state/model mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(AdamState<Real>::beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(AdamState<Real>::beta2, double(state.t));
  for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
    auto& p = *model.params()[pi].second;
    require(state.m[pi].size() == p.v.size(), "adam_step: shape mismatch for " + model.params()[pi].first);
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      p.v[i] -= Real(lr * weight_decay) * p.v[i];
      const Real g = p.g[i];
      m[i] = Real(AdamState<Real>::beta1) * m[i] + Real(1 - AdamState<Real>::beta1) * g;
      v[i] = Real(AdamState<Real>::beta2) * v[i] + Real(1 - AdamState<Real>::beta2) * g * g;
      const Real mhat = m[i] / Real(bc1);
      const Real vhat = v[i] / Real(bc2);
      p.v[i] -= Real(lr) * mhat / (std::sqrt(vhat) + Real(AdamState<Real>::eps));
    }
  }
}

// ---- model <-> checkpoint ----

inline std::vector<double> encode_model_config(const ModelConfig& c, double cube_mm) {
  return {double(int(c.kind)),      double(c.num_joints),     double(c.input_size),
          double(int(c.encoder)),   double(c.base_channels),  double(c.feature_channels),
          double(c.head_channels),  double(c.depth_features), double(c.hourglass_levels),
          double(int(c.fusion)),    double(c.fc_hidden),      cube_mm};
}

inline std::pair<ModelConfig, double> decode_model_config(const std::vector<double>& v) {
  require(v.size() == 12, "checkpoint: bad __config__ record");
  ModelConfig c;
  c.kind = ModelKind(int(v[0]));
  c.num_joints = int(v[1]);
  c.input_size = int(v[2]);
  c.encoder = EncoderVariant(int(v[3]));
  c.base_channels = int(v[4]);
  c.feature_channels = int(v[5]);
  c.head_channels = int(v[6]);
  c.depth_features = int(v[7]);
  c.hourglass_levels = int(v[8]);
  c.fusion = FusionMode(int(v[9]));
  c.fc_hidden = int(v[10]);
  return {c, v[11]};
}

template <class Real>
void save_model(const std::string& path, const Model<Real>& model, double cube_mm) {
  std::vector<CheckpointRecord> records;
  records.push_back({"__config__", Shape{12}, encode_model_config(model.cfg, cube_mm)});
  for (const auto& [name, p] : model.params()) {
    CheckpointRecord r;
    r.name = name;
    r.dims = p->dims;
    r.values.assign(p->v.begin(), p->v.end());
    records.push_back(std::move(r));
  }
  save_checkpoint(path, records, sizeof(Real) == 4 ? 32 : 64);
}

template <class Real>
std::pair<Model<Real>, double> load_model(const std::string& path) {
  const auto records = load_checkpoint(path);
  require(!records.empty() && records[0].name == "__config__", "checkpoint: missing __config__ record");
  auto [cfg, cube_mm] = decode_model_config(records[0].values);
  Model<Real> model = Model<Real>::init(cfg, 0);
  std::size_t ri = 1;
  for (auto& [name, p] : model.params()) {
    require(ri < records.size(), "checkpoint: missing parameter " + name);
    const auto& r = records[ri++];
    require(r.name == name && r.dims == p->dims, "checkpoint: parameter mismatch at " + name);
    for (std::size_t i = 0; i < p->v.size(); ++i) p->v[i] = Real(r.values[i]);
  }
  require(ri == records.size(), "checkpoint: unexpected extra records");
  return {std::move(model), cube_mm};
}

// ---- prediction / evaluation ----

template <class Real>
PoseXYZ predict_pose(const Model<Real>& model, const DepthFrame& frame, double cube_mm) {
  CropSpec crop;
  crop.center_xyz = joint_centroid(frame);
  crop.cube_mm = cube_mm;
  crop.out_size = model.cfg.input_size;
  NormalizedCrop nc = crop_and_normalize(frame, crop);
  auto image = make_tensor<Real>({1, nc.out_size, nc.out_size});
  for (std::size_t i = 0; i < nc.image.size(); ++i) image->v[i] = Real(nc.image[i]);
  Tape<Real> tape;
  ForwardResult<Real> r = forward(tape, model, image);
  return uncrop_pose(r.pose_uvd_crop(), crop, frame.intrinsics);
}

template <class Real>
EvalReport evaluate_model(const Model<Real>& model, const std::vector<DepthFrame>& frames, double cube_mm) {
  std::vector<PoseXYZ> pred, gt;
  for (const auto& f : frames) {
    pred.push_back(predict_pose(model, f, cube_mm));
    gt.push_back(f.joints_xyz);
  }
  return evaluate_poses(pred, gt);
}

// ---- training loop ----

inline int worker_count(int batch_size) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("THN_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = cap;
  }
  return std::max(1, std::min(n, batch_size));
}

struct EpochLoss {
  int epoch;
  double lr;
  double loss;
};

inline void write_loss_csv(const std::string& path, const std::vector<EpochLoss>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("train: cannot write " + path);
  out << "epoch,lr,loss\n";
  for (const auto& e : history) out << e.epoch << "," << e.lr << "," << e.loss << "\n";
}

// Deterministic given cfg.seed: batch order, augmentation draws and
// gradient reduction order depend only on (seed, epoch, frame index),
// never on thread count.
template <class Real>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<DepthFrame>& frames)
      : cfg_(cfg), model_(Model<Real>::init(cfg.model, cfg.seed)), adam_(AdamState<Real>::zeros_like(model_)) {
    cfg_.validate();
    prepare(frames);
  }

  // Resume: parameters and optimizer state from a checkpoint pair.
  Trainer(const TrainConfig& cfg, const std::vector<DepthFrame>& frames, const std::string& ckpt_path)
      : cfg_(cfg), model_(Model<Real>::init(cfg.model, cfg.seed)), adam_(AdamState<Real>::zeros_like(model_)) {
    cfg_.validate();
    prepare(frames);
    auto [loaded, cube] = load_model<Real>(ckpt_path);
    require(loaded.params().size() == model_.params().size(), "resume: model layout mismatch");
    for (std::size_t i = 0; i < model_.params().size(); ++i)
      model_.params()[i].second->v = loaded.params()[i].second->v;
    load_opt_state(ckpt_path + ".opt");
  }

  const Model<Real>& model() const { return model_; }
  int epoch() const { return epoch_; }
  const std::vector<EpochLoss>& history() const { return history_; }
  std::int64_t steps_per_epoch() const {
    return (std::int64_t(crops_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  // Runs epochs [epoch_, until_epoch).
  void run(int until_epoch) {
    const std::int64_t total_steps = steps_per_epoch() * cfg_.epochs;
    while (epoch_ < until_epoch) {
      std::vector<std::size_t> order(crops_.size());
      std::iota(order.begin(), order.end(), std::size_t(0));
      Rng shuffle_rng = Rng::for_index(cfg_.seed, 0xE70C0000ull + std::uint64_t(epoch_));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

      double epoch_loss = 0;
      double lr_last = 0;
      std::int64_t samples = 0;
      for (std::int64_t b = 0; b < steps_per_epoch(); ++b) {
        const std::size_t lo = std::size_t(b) * cfg_.batch_size;
        const std::size_t hi = std::min(order.size(), lo + cfg_.batch_size);
        std::vector<std::size_t> batch(order.begin() + lo, order.begin() + hi);
        const std::int64_t step = std::int64_t(epoch_) * steps_per_epoch() + b;
        const double lr = cosine_lr(step, total_steps, cfg_.lr0);
        const double loss = train_step(batch, lr, step);
        epoch_loss += loss * double(batch.size());
        samples += std::int64_t(batch.size());
        lr_last = lr;
      }
      history_.push_back({epoch_, lr_last, epoch_loss / double(samples)});
      ++epoch_;
    }
  }

  void save(const std::string& ckpt_path) const {
    save_model(ckpt_path, model_, cfg_.cube_mm);
    save_opt_state(ckpt_path + ".opt");
  }

 private:
  TrainConfig cfg_;
  Model<Real> model_;
  AdamState<Real> adam_;
  std::vector<NormalizedCrop> crops_;
  int epoch_ = 0;
  std::vector<EpochLoss> history_;

  void prepare(const std::vector<DepthFrame>& frames) {
    require(!frames.empty(), "train: empty dataset");
    require(int(frames[0].joints_xyz.size()) == cfg_.model.num_joints,
            "train: dataset has " + std::to_string(frames[0].joints_xyz.size()) + " joints, model expects " +
                std::to_string(cfg_.model.num_joints));
    for (const auto& f : frames) {
      CropSpec crop;
      crop.center_xyz = joint_centroid(f);
      crop.cube_mm = cfg_.cube_mm;
      crop.out_size = cfg_.model.input_size;
      crops_.push_back(crop_and_normalize(f, crop));
    }
  }

  // Mean loss over the batch; gradients accumulated into model_ in
  // frame-index order regardless of worker count.
  double train_step(const std::vector<std::size_t>& batch, double lr, std::int64_t step) {
    const std::size_t n = batch.size();
    const std::size_t np = model_.params().size();
    std::vector<std::vector<std::vector<Real>>> sample_grads(n);
    std::vector<double> sample_loss(n, 0.0);
    std::exception_ptr error;
    std::atomic<bool> failed{false};

    const int workers = worker_count(int(n));
    auto work = [&](int w) {
      try {
        Model<Real> local = model_.clone();
        for (std::size_t i = w; i < n; i += std::size_t(workers)) {
          if (failed.load()) return;
          local.zero_grad();
          const std::size_t fi = batch[i];
          Rng aug_rng = Rng::for_index(cfg_.seed, 0xA0000000ull + std::uint64_t(epoch_) * 1000003ull + fi);
          NormalizedCrop sample = augment_sample(crops_[fi], cfg_.augment, aug_rng);
          auto image = make_tensor<Real>({1, sample.out_size, sample.out_size});
          for (std::size_t px = 0; px < sample.image.size(); ++px) image->v[px] = Real(sample.image[px]);
          Labels<Real> labels = make_labels<Real>(sample);
          Tape<Real> tape;
          ForwardResult<Real> r = forward(tape, local, image, &labels, Real(cfg_.lambda));
          if (!std::isfinite(double(r.loss->v[0])))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
          tape.backward(r.loss);
          sample_loss[i] = double(r.loss->v[0]);
          sample_grads[i].resize(np);
          for (std::size_t pi = 0; pi < np; ++pi) sample_grads[i][pi] = local.params()[pi].second->g;
        }
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    model_.zero_grad();
    const Real scale = Real(1) / Real(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t pi = 0; pi < np; ++pi) {
        auto& g = model_.params()[pi].second->g;
        const auto& sg = sample_grads[i][pi];
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * sg[k];
      }
    adam_step(model_, adam_, lr, cfg_.weight_decay);

    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) loss += sample_loss[i];
    return loss / double(n);
  }

  void save_opt_state(const std::string& path) const {
    std::vector<CheckpointRecord> records;
    records.push_back({"__meta__", Shape{2}, {double(adam_.t), double(epoch_)}});
    for (std::size_t pi = 0; pi < model_.params().size(); ++pi) {
      const auto& name = model_.params()[pi].first;
      CheckpointRecord m{"m." + name, model_.params()[pi].second->dims, {}};
      m.values.assign(adam_.m[pi].begin(), adam_.m[pi].end());
      CheckpointRecord v{"v." + name, model_.params()[pi].second->dims, {}};
      v.values.assign(adam_.v[pi].begin(), adam_.v[pi].end());
      records.push_back(std::move(m));
      records.push_back(std::move(v));
    }
    save_checkpoint(path, records, sizeof(Real) == 4 ? 32 : 64);
  }

  void load_opt_state(const std::string& path) {
    const auto records = load_checkpoint(path);
    require(!records.empty() && records[0].name == "__meta__" && records[0].values.size() == 2,
            "resume: bad optimizer state file");
    adam_.t = std::int64_t(records[0].values[0]);
    epoch_ = int(records[0].values[1]);
    require(records.size() == 1 + 2 * model_.params().size(), "resume: optimizer record count mismatch");
    for (std::size_t pi = 0; pi < model_.params().size(); ++pi) {
      const auto& m = records[1 + 2 * pi];
      const auto& v = records[2 + 2 * pi];
      require(m.name == "m." + model_.params()[pi].first && v.name == "v." + model_.params()[pi].first,
              "resume: optimizer record order mismatch");
      for (std::size_t i = 0; i < adam_.m[pi].size(); ++i) {
        adam_.m[pi][i] = Real(m.values[i]);
        adam_.v[pi][i] = Real(v.values[i]);
      }
    }
  }
};

// ---- ablation harness ----

struct AblationRow {
  std::string label;
  TrainConfig cfg;
};

// Trains each configuration under the shared seed and reports the final
// training loss plus the held-out mean error. No ordering is asserted.
template <class Real>
std::string run_ablation_suite(const std::vector<AblationRow>& rows, const std::vector<DepthFrame>& train_frames,
                               const std::vector<DepthFrame>& test_frames) {
  std::ostringstream csv;
  csv << "label,model_kind,encoder,fusion,pixdropout,final_loss,mean_error_mm,config_hash\n";
  for (const auto& row : rows) {
    Trainer<Real> trainer(row.cfg, train_frames);
    trainer.run(row.cfg.epochs);
    const double final_loss = trainer.history().back().loss;
    const EvalReport report = evaluate_model(trainer.model(), test_frames, row.cfg.cube_mm);
    csv << row.label << "," << to_string(row.cfg.model.kind) << "," << to_string(row.cfg.model.encoder) << ","
        << to_string(row.cfg.model.fusion) << "," << (row.cfg.augment.enabled && row.cfg.augment.alpha > 0 ? 1 : 0)
        << "," << final_loss << "," << report.mean_error_mm << "," << row.cfg.hash() << "\n";
  }
  return csv.str();
}

}  // namespace thn
