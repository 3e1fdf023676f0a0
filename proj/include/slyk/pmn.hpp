#pragma once

// Downstream gaze model: the pretrained encoder, three bottleneck CNNs (face,
// left eye, right eye), feature fusion and the gaze / expression heads.

#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "slyk/geometry.hpp"
#include "slyk/networks.hpp"

namespace slyk::pmn {

using nn::ForwardContext;
using nn::Module;
using nn::StateVisitor;
using nn::Var;

struct BottleneckConfig {
  std::vector<int> channels{32, 64, 128};
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int out_dim = 512;
  bool relu = true;  // activation after each BN
};

/// conv -> BN (-> ReLU) x3, adaptive average pool to 1x1, FC.
template <class T>
class Bottleneck : public Module<T> {
 public:
  Bottleneck(const BottleneckConfig& cfg, std::mt19937_64& rng) {
    int in = 3;
    for (int c : cfg.channels) {
      blocks_.push_back(std::make_unique<nn::ConvBnAct<T>>(in, c, cfg.kernel, cfg.stride, cfg.pad, cfg.relu, rng));
      in = c;
    }
    fc_ = std::make_unique<nn::Linear<T>>(in, cfg.out_dim, rng);
  }

  Var<T> forward(const Var<T>& img, const ForwardContext& ctx) {
    SLYK_EXPECT(img.value().rank() == 4 && img.dim(1) == 3,
                "bottleneck expects a 3-channel NCHW image, got " << nn::to_string(img.shape()));
    Var<T> h = img;
    for (auto& b : blocks_) h = b->forward(h, ctx);
    return fc_->forward(nn::global_avg_pool(h));
  }

  int out_dim() const { return fc_->out_features(); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->visit(nn::join_name(prefix, std::to_string(i)), v);
    fc_->visit(nn::join_name(prefix, "fc"), v);
  }

 private:
  std::vector<std::unique_ptr<nn::ConvBnAct<T>>> blocks_;
  std::unique_ptr<nn::Linear<T>> fc_;
};

/// F_e: elementwise mean of the two eye features.
template <class T>
Var<T> fuse_eyes(const Var<T>& left, const Var<T>& right) {
  SLYK_EXPECT(left.shape() == right.shape() && left.value().rank() == 2,
              "fuse_eyes: " << nn::to_string(left.shape()) << " vs " << nn::to_string(right.shape()));
  return nn::scale(nn::add(left, right), T(0.5));
}

/// F_F = F_f ⊕ F_fb
template <class T>
Var<T> fuse_face(const Var<T>& f_ssl, const Var<T>& f_bottleneck) {
  SLYK_EXPECT(f_ssl.dim(0) == f_bottleneck.dim(0), "fuse_face: batch mismatch");
  return nn::concat_cols<T>({f_ssl, f_bottleneck});
}

/// F_T = F_F ⊕ F_e
template <class T>
Var<T> assemble(const Var<T>& f_face, const Var<T>& f_eyes) {
  SLYK_EXPECT(f_face.dim(0) == f_eyes.dim(0), "assemble: batch mismatch");
  return nn::concat_cols<T>({f_face, f_eyes});
}

struct HeadConfig {
  std::vector<int> hidden{1024, 256};
  bool bounded = true;   // dropout + final tanh
  double dropout = 0.1;
};

/// in -> hidden[0] (+BN) -> ... -> out, ReLU between layers. The bounded
/// variant adds dropout after each hidden activation and a final tanh.
template <class T>
class GazeHead : public Module<T> {
 public:
  GazeHead(int in, int out, const HeadConfig& cfg, bool final_tanh, std::mt19937_64& rng)
      : in_(in), bounded_(cfg.bounded), tanh_(final_tanh && cfg.bounded), dropout_(cfg.dropout) {
    SLYK_EXPECT(!cfg.hidden.empty(), "gaze head: at least one hidden layer is required");
    int prev = in;
    for (int h : cfg.hidden) {
      fcs_.push_back(std::make_unique<nn::Linear<T>>(prev, h, rng));
      prev = h;
    }
    fcs_.push_back(std::make_unique<nn::Linear<T>>(prev, out, rng));
    bn_ = std::make_unique<nn::BatchNorm<T>>(cfg.hidden.front());
  }

  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) {
    SLYK_EXPECT(x.value().rank() == 2 && x.dim(1) == in_,
                "gaze head expects (N, " << in_ << "), got " << nn::to_string(x.shape()));
    Var<T> h = x;
    for (std::size_t i = 0; i + 1 < fcs_.size(); ++i) {
      h = fcs_[i]->forward(h);
      if (i == 0) h = bn_->forward(h, ctx);
      h = nn::relu(h);
      if (bounded_ && ctx.training && dropout_ > 0.0) {
        SLYK_EXPECT(ctx.rng, "gaze head: dropout in training mode needs an rng");
        h = nn::dropout(h, dropout_, true, *ctx.rng);
      }
    }
    h = fcs_.back()->forward(h);
    return tanh_ ? nn::tanh(h) : h;
  }

  int in_dim() const noexcept { return in_; }
  int out_dim() const { return fcs_.back()->out_features(); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < fcs_.size(); ++i) {
      fcs_[i]->visit(nn::join_name(prefix, "fc" + std::to_string(i)), v);
      if (i == 0) bn_->visit(nn::join_name(prefix, "bn0"), v);
    }
  }

 private:
  int in_;
  bool bounded_, tanh_;
  double dropout_;
  std::vector<std::unique_ptr<nn::Linear<T>>> fcs_;
  std::unique_ptr<nn::BatchNorm<T>> bn_;
};

/// Maps (pitch, yaw) in radians into (-1, 1)^2 and back.
struct LabelScale {
  double pitch = std::numbers::pi / 2;
  double yaw = std::numbers::pi;

  geometry::GazeVector2 normalize(const geometry::GazeAngles& g) const { return {g.pitch / pitch, g.yaw / yaw}; }
  geometry::GazeAngles denormalize(const geometry::GazeVector2& n) const { return {n.a * pitch, n.b * yaw}; }
};

struct ModelConfig {
  net::EncoderConfig encoder;
  int face_feature_dim = 256;  // F_f
  BottleneckConfig bottleneck;
  HeadConfig head;
  bool use_pmn = true;
  bool freeze_encoder = false;
  int num_classes = 0;  // 0: gaze regression, otherwise expression classes
  LabelScale scale;
};

inline int head_input_dim(const ModelConfig& cfg) {
  return cfg.face_feature_dim + (cfg.use_pmn ? 2 * cfg.bottleneck.out_dim : 0);
}

template <class T>
struct FusedFeatures {
  Var<T> y, f_face_ssl, f_face_bottleneck, f_left, f_right, f_eyes, f_face, f_total;
};

template <class T>
struct ModelOutput {
  FusedFeatures<T> features;
  Var<T> head;    // normalized gaze pair or class logits
  Var<T> angles;  // gaze only: (pitch, yaw) in radians
};

template <class T>
class GazeModel : public Module<T> {
 public:
  GazeModel(const ModelConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), encoder_(cfg.encoder, rng), face_proj_(encoder_.out_dim(), cfg.face_feature_dim, rng) {
    if (cfg.use_pmn) {
      face_bn_ = std::make_unique<Bottleneck<T>>(cfg.bottleneck, rng);
      left_bn_ = std::make_unique<Bottleneck<T>>(cfg.bottleneck, rng);
      right_bn_ = std::make_unique<Bottleneck<T>>(cfg.bottleneck, rng);
    }
    const int out = cfg.num_classes > 0 ? cfg.num_classes : 2;
    head_ = std::make_unique<GazeHead<T>>(head_input_dim(cfg), out, cfg.head, cfg.num_classes == 0, rng);
    if (cfg.freeze_encoder) encoder_.set_trainable(false);
    Tensor scale({2, 2}, T(0));
    scale[0] = static_cast<T>(cfg.scale.pitch);
    scale[3] = static_cast<T>(cfg.scale.yaw);
    scale_ = nn::constant(std::move(scale));
  }

  ModelOutput<T> forward(const Var<T>& face, const Var<T>& left, const Var<T>& right, const ForwardContext& ctx) {
    ModelOutput<T> o;
    auto& f = o.features;
    ForwardContext enc_ctx = ctx;
    if (cfg_.freeze_encoder) enc_ctx.training = false;
    f.y = encoder_.forward(face, left, right, enc_ctx);
    f.f_face_ssl = face_proj_.forward(f.y);
    if (cfg_.use_pmn) {
      f.f_face_bottleneck = face_bn_->forward(face, ctx);
      f.f_left = left_bn_->forward(left, ctx);
      f.f_right = right_bn_->forward(right, ctx);
      f.f_eyes = fuse_eyes(f.f_left, f.f_right);
      f.f_face = fuse_face(f.f_face_ssl, f.f_face_bottleneck);
      f.f_total = assemble(f.f_face, f.f_eyes);
    } else {
      f.f_face = f.f_face_ssl;
      f.f_total = f.f_face_ssl;
    }
    o.head = head_->forward(f.f_total, ctx);
    if (cfg_.num_classes == 0) o.angles = nn::linear(o.head, scale_);
    return o;
  }

  net::Encoder<T>& encoder() noexcept { return encoder_; }
  GazeHead<T>& head() noexcept { return *head_; }
  const ModelConfig& config() const noexcept { return cfg_; }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    encoder_.visit(nn::join_name(prefix, "encoder"), v);
    face_proj_.visit(nn::join_name(prefix, "face_proj"), v);
    if (face_bn_) {
      face_bn_->visit(nn::join_name(prefix, "pmn.face"), v);
      left_bn_->visit(nn::join_name(prefix, "pmn.left"), v);
      right_bn_->visit(nn::join_name(prefix, "pmn.right"), v);
    }
    head_->visit(nn::join_name(prefix, "head"), v);
  }

 private:
  using Tensor = nn::Tensor<T>;
  ModelConfig cfg_;
  net::Encoder<T> encoder_;
  nn::Linear<T> face_proj_;
  std::unique_ptr<Bottleneck<T>> face_bn_, left_bn_, right_bn_;
  std::unique_ptr<GazeHead<T>> head_;
  Var<T> scale_;
};

}  // namespace slyk::pmn
