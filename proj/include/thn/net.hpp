#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "thn/camera.hpp"
#include "thn/rng.hpp"
#include "thn/tensor.hpp"

namespace thn {

enum class EncoderVariant { hourglass, downsample_deconv };
enum class FusionMode { fused, uv_only, enh_only, fuse_sum, fuse_concat };
enum class ModelKind { trihorn, regression };

inline std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::hourglass ? "hourglass" : "downsample_deconv";
}
inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::fused: return "fused";
    case FusionMode::uv_only: return "uv_only";
    case FusionMode::enh_only: return "enh_only";
    case FusionMode::fuse_sum: return "fuse_sum";
    case FusionMode::fuse_concat: return "fuse_concat";
  }
  return "?";
}
inline std::string to_string(ModelKind k) { return k == ModelKind::trihorn ? "trihorn" : "regression"; }

inline EncoderVariant parse_encoder(const std::string& s) {
  if (s == "hourglass") return EncoderVariant::hourglass;
  if (s == "downsample_deconv") return EncoderVariant::downsample_deconv;
  throw std::invalid_argument("unknown encoder variant: " + s);
}
inline FusionMode parse_fusion(const std::string& s) {
  if (s == "fused") return FusionMode::fused;
  if (s == "uv_only") return FusionMode::uv_only;
  if (s == "enh_only") return FusionMode::enh_only;
  if (s == "fuse_sum") return FusionMode::fuse_sum;
  if (s == "fuse_concat") return FusionMode::fuse_concat;
  throw std::invalid_argument("unknown fusion mode: " + s);
}
inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "trihorn") return ModelKind::trihorn;
  if (s == "regression") return ModelKind::regression;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelConfig {
  ModelKind kind = ModelKind::trihorn;
  int num_joints = 14;
  int input_size = 48;            // crop pixels; must be divisible by 16
  EncoderVariant encoder = EncoderVariant::hourglass;
  int base_channels = 12;
  int feature_channels = 24;      // encoder output channels c
  int head_channels = 12;
  int depth_features = 48;        // D
  int hourglass_levels = 3;
  FusionMode fusion = FusionMode::fused;
  int fc_hidden = 64;             // regression baseline only

  int feature_size() const { return input_size / 2; }

  void validate() const {
    require(num_joints >= 1, "model: num_joints must be >= 1");
    require(input_size >= 16 && input_size % 16 == 0, "model: input_size must be a multiple of 16, >= 16");
    require(base_channels >= 1 && feature_channels >= 1 && head_channels >= 1 && depth_features >= 1,
            "model: channel counts must be positive");
    require(hourglass_levels >= 1 && (input_size / 2) % (1 << hourglass_levels) == 0,
            "model: feature size must be divisible by 2^hourglass_levels");
  }
};

// Parameter set with stable, name-ordered registry (checkpoint order).
template <class Real>
class Model {
 public:
  ModelConfig cfg;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng = Rng::for_index(seed, 0x7468u);
    const int B = cfg.base_channels, C = cfg.feature_channels, H = cfg.head_channels;
    const int J = cfg.num_joints, D = cfg.depth_features;

    m.add_conv(rng, "enc.stem", B, 1, 3);
    if (cfg.encoder == EncoderVariant::hourglass) {
      for (int l = 0; l < cfg.hourglass_levels; ++l) {
        m.add_conv(rng, "enc.hg.l" + std::to_string(l) + ".skip", B, B, 3);
        m.add_conv(rng, "enc.hg.l" + std::to_string(l) + ".down", B, B, 3);
        m.add_conv(rng, "enc.hg.l" + std::to_string(l) + ".up", B, B, 3);
      }
      m.add_conv(rng, "enc.hg.bottom", B, B, 3);
    } else {
      m.add_conv(rng, "enc.dd.down0", B, B, 3);
      m.add_conv(rng, "enc.dd.down1", B, B, 3);
      m.add_conv(rng, "enc.dd.up0", B, B, 3);
      m.add_conv(rng, "enc.dd.up1", B, B, 3);
    }
    m.add_conv(rng, "enc.out", C, B, 1);

    if (cfg.kind == ModelKind::trihorn) {
      m.add_head(rng, "uv", C, H, J);
      if (cfg.fusion != FusionMode::uv_only) m.add_head(rng, "enh", C, H, J);
      m.add_head(rng, "depth", C, H, D);
      if (cfg.fusion == FusionMode::fused) m.add_param("fusion.beta_raw", make_tensor<Real>({J}, true));
      if (cfg.fusion == FusionMode::fuse_concat) m.add_conv(rng, "fusion.concat", J, 2 * J, 3);
      m.add_param("depth_head.w", m.fan_in_uniform(rng, Shape{D}, D));
      m.add_param("depth_head.b", make_tensor<Real>({1}, true));
    } else {
      m.add_param("fc1.w", m.fan_in_uniform(rng, Shape{cfg.fc_hidden, C}, C));
      m.add_param("fc1.b", make_tensor<Real>({cfg.fc_hidden}, true));
      m.add_param("fc2.w", m.fan_in_uniform(rng, Shape{3 * J, cfg.fc_hidden}, cfg.fc_hidden));
      m.add_param("fc2.b", make_tensor<Real>({3 * J}, true));
    }
    return m;
  }

  const std::vector<std::pair<std::string, TensorPtr<Real>>>& params() const { return params_; }
  std::vector<std::pair<std::string, TensorPtr<Real>>>& params() { return params_; }

  TensorPtr<Real> param(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "model: no parameter named " + name);
    return params_[it->second].second;
  }
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  std::int64_t num_scalars() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p->size();
    return n;
  }

  // Deep copy; the clone owns fresh value and grad buffers.
  Model clone() const {
    Model m;
    m.cfg = cfg;
    for (const auto& [name, p] : params_) {
      auto q = make_tensor<Real>(p->dims, p->v, true);
      m.add_param(name, q);
    }
    return m;
  }

  void add_param(const std::string& name, TensorPtr<Real> t) {
    require(index_.find(name) == index_.end(), "model: duplicate parameter " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
  }

 private:
  std::vector<std::pair<std::string, TensorPtr<Real>>> params_;
  std::map<std::string, std::size_t> index_;

  TensorPtr<Real> fan_in_uniform(Rng& rng, Shape dims, int fan_in) {
    auto t = make_tensor<Real>(dims, true);
    const double limit = std::sqrt(6.0 / fan_in);  // He-style gain for the ReLU stacks
    for (auto& x : t->v) x = static_cast<Real>(rng.uniform(-limit, limit));
    return t;
  }

  void add_conv(Rng& rng, const std::string& name, int c_out, int c_in, int k) {
    add_param(name + ".w", fan_in_uniform(rng, Shape{c_out, c_in, k, k}, c_in * k * k));
    add_param(name + ".b", make_tensor<Real>({c_out}, true));
  }

  void add_head(Rng& rng, const std::string& name, int c_in, int mid, int out) {
    add_conv(rng, name + ".c0", mid, c_in, 3);
    add_conv(rng, name + ".c1", mid, mid, 3);
    add_conv(rng, name + ".proj", out, mid, 1);
  }
};

template <class Real>
struct Labels {
  TensorPtr<Real> uv_feature;  // [J,2], feature-grid coordinates (crop px / 2)
  TensorPtr<Real> z_norm;      // [J], normalized depth
};

template <class Real>
Labels<Real> make_labels(const NormalizedCrop& crop) {
  const int j = static_cast<int>(crop.joints_uvd_norm.size());
  Labels<Real> lab;
  lab.uv_feature = make_tensor<Real>({j, 2});
  lab.z_norm = make_tensor<Real>({j});
  for (int i = 0; i < j; ++i) {
    lab.uv_feature->v[2 * i] = static_cast<Real>(crop.joints_uvd_norm[i][0] / 2.0);
    lab.uv_feature->v[2 * i + 1] = static_cast<Real>(crop.joints_uvd_norm[i][1] / 2.0);
    lab.z_norm->v[i] = static_cast<Real>(crop.joints_uvd_norm[i][2]);
  }
  return lab;
}

template <class Real>
struct ForwardResult {
  TensorPtr<Real> att_uv, att_enh, att_fused;  // [J,h,w] (att_enh null unless present)
  TensorPtr<Real> heatmaps;                    // [J,h,w], spatial softmax of att_uv
  TensorPtr<Real> uv;                          // [J,2], feature-grid coordinates
  TensorPtr<Real> depth;                       // [J], normalized
  TensorPtr<Real> l_uv, l_d, loss;             // set when labels are given

  // (u,v) in crop pixels plus normalized depth
  std::vector<Vec3> pose_uvd_crop() const {
    std::vector<Vec3> pose;
    const int j = depth->dims[0];
    for (int i = 0; i < j; ++i)
      pose.push_back({double(uv->v[2 * i]) * 2.0, double(uv->v[2 * i + 1]) * 2.0, double(depth->v[i])});
    return pose;
  }
};

namespace detail {

template <class Real>
TensorPtr<Real> conv_relu(Tape<Real>& t, const Model<Real>& m, const std::string& name, TensorPtr<Real> x,
                          int stride = 1, int pad = 1) {
  return t.relu(t.conv2d(x, m.param(name + ".w"), m.param(name + ".b"), stride, pad));
}

template <class Real>
TensorPtr<Real> hourglass(Tape<Real>& t, const Model<Real>& m, TensorPtr<Real> x, int level) {
  if (level == m.cfg.hourglass_levels) return conv_relu(t, m, "enc.hg.bottom", x);
  const std::string pre = "enc.hg.l" + std::to_string(level);
  TensorPtr<Real> skip = conv_relu(t, m, pre + ".skip", x);
  TensorPtr<Real> down = conv_relu(t, m, pre + ".down", t.maxpool2(x));
  TensorPtr<Real> inner = hourglass(t, m, down, level + 1);
  TensorPtr<Real> up = conv_relu(t, m, pre + ".up", t.upsample_nearest2(inner));
  return t.add(skip, up);
}

template <class Real>
TensorPtr<Real> encode(Tape<Real>& t, const Model<Real>& m, TensorPtr<Real> image) {
  TensorPtr<Real> x = conv_relu(t, m, "enc.stem", image, 2, 1);  // [B, n/2, n/2]
  if (m.cfg.encoder == EncoderVariant::hourglass) {
    x = hourglass(t, m, x, 0);
  } else {
    x = conv_relu(t, m, "enc.dd.down0", x, 2, 1);
    x = conv_relu(t, m, "enc.dd.down1", x, 2, 1);
    x = conv_relu(t, m, "enc.dd.up0", t.upsample_nearest2(x));
    x = conv_relu(t, m, "enc.dd.up1", t.upsample_nearest2(x));
  }
  return t.relu(t.conv2d(x, m.param("enc.out.w"), m.param("enc.out.b"), 1, 0));  // [C, h, w]
}

template <class Real>
TensorPtr<Real> head(Tape<Real>& t, const Model<Real>& m, const std::string& name, TensorPtr<Real> feat) {
  TensorPtr<Real> x = conv_relu(t, m, name + ".c0", feat);
  x = conv_relu(t, m, name + ".c1", x);
  return t.conv2d(x, m.param(name + ".proj.w"), m.param(name + ".proj.b"), 1, 0);
}

}  // namespace detail

// Full forward pass. image is [1, n, n] with n == cfg.input_size.
// When labels are given, the loss terms are attached to the result.
template <class Real>
ForwardResult<Real> forward(Tape<Real>& tape, const Model<Real>& model, TensorPtr<Real> image,
                            const Labels<Real>* labels = nullptr, Real lambda = Real(1)) {
  const ModelConfig& cfg = model.cfg;
  require(image->dims == Shape{1, cfg.input_size, cfg.input_size},
          "forward: image must be [1," + std::to_string(cfg.input_size) + "," +
              std::to_string(cfg.input_size) + "], got " + shape_str(image->dims));

  ForwardResult<Real> r;
  TensorPtr<Real> feat = detail::encode(tape, model, image);

  if (cfg.kind == ModelKind::regression) {
    // global average pool via uniform-attention feature pooling
    const std::int64_t hw = static_cast<std::int64_t>(feat->dims[1]) * feat->dims[2];
    auto uniform = make_tensor<Real>({1, feat->dims[1], feat->dims[2]});
    std::fill(uniform->v.begin(), uniform->v.end(), Real(1) / Real(hw));
    TensorPtr<Real> pooled = tape.reshape(tape.pool_features(uniform, feat), {cfg.feature_channels});
    TensorPtr<Real> hid = tape.relu(tape.linear(pooled, model.param("fc1.w"), model.param("fc1.b")));
    TensorPtr<Real> out = tape.linear(hid, model.param("fc2.w"), model.param("fc2.b"));
    r.uv = tape.reshape(tape.slice(out, 0, 2 * cfg.num_joints), {cfg.num_joints, 2});
    r.depth = tape.slice(out, 2 * cfg.num_joints, cfg.num_joints);
  } else {
    r.att_uv = detail::head(tape, model, "uv", feat);
    r.heatmaps = tape.spatial_softmax(r.att_uv);
    r.uv = tape.integrate_uv(r.heatmaps);
    if (cfg.fusion != FusionMode::uv_only) r.att_enh = detail::head(tape, model, "enh", feat);

    switch (cfg.fusion) {
      case FusionMode::fused: {
        TensorPtr<Real> beta = tape.sigmoid(model.param("fusion.beta_raw"));
        r.att_fused = tape.spatial_softmax(tape.convex_combine(r.att_uv, r.att_enh, beta));
        break;
      }
      case FusionMode::uv_only:
        r.att_fused = r.heatmaps;
        break;
      case FusionMode::enh_only:
        r.att_fused = tape.spatial_softmax(r.att_enh);
        break;
      case FusionMode::fuse_sum:
        r.att_fused = tape.spatial_softmax(tape.add(r.att_uv, r.att_enh));
        break;
      case FusionMode::fuse_concat: {
        TensorPtr<Real> cat = tape.concat_channels({r.att_uv, r.att_enh});
        r.att_fused = tape.spatial_softmax(
            tape.conv2d(cat, model.param("fusion.concat.w"), model.param("fusion.concat.b"), 1, 1));
        break;
      }
    }
    TensorPtr<Real> dmap = detail::head(tape, model, "depth", feat);
    TensorPtr<Real> pooled = tape.pool_features(r.att_fused, dmap);
    r.depth = tape.joint_linear(pooled, model.param("depth_head.w"), model.param("depth_head.b"));
  }

  assert_finite(*r.uv, "forward uv output");
  assert_finite(*r.depth, "forward depth output");

  if (labels) {
    r.l_uv = tape.loss_uv(r.uv, labels->uv_feature);
    r.l_d = tape.loss_depth(r.depth, labels->z_norm);
    r.loss = tape.total_loss(r.l_uv, r.l_d, lambda);
    assert_finite(*r.loss, "forward loss");
  }
  return r;
}

}  // namespace thn
