#pragma once

// Self-supervised encoder: global backbone and two eye branches with
// attention pooling, projection/prediction heads, and the online/target pair
// coupled by an exponential moving average.

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "slyk/layers.hpp"

namespace slyk::net {

using nn::ForwardContext;
using nn::Module;
using nn::StateVisitor;
using nn::Var;

struct ConvStackConfig {
  std::vector<int> channels;
  int kernel = 3;
  int stride = 2;
  int pad = 1;
};

struct BackboneConfig {
  std::string id = "toy-cnn";
  ConvStackConfig convs{{32, 64, 128, 256}, 3, 2, 1};
};

struct LocalBranchConfig {
  ConvStackConfig convs{{32, 64, 128}, 3, 2, 1};
  int heads = 8;
  int out_dim = 52;
  int patch_h = 36;
  int patch_w = 60;
};

struct EncoderConfig {
  BackboneConfig backbone;
  int face_h = 112;
  int face_w = 112;
  int global_heads = 8;
  LocalBranchConfig local;
  bool use_global = true;
  bool use_local = true;
  bool use_attention = true;  // off: plain average pooling in every branch
};

/// Stride-`s` conv -> BN -> ReLU blocks, one per entry of `channels`.
template <class T>
class ConvStack : public Module<T> {
 public:
  ConvStack(int in_channels, const ConvStackConfig& cfg, std::mt19937_64& rng) {
    SLYK_EXPECT(!cfg.channels.empty(), "conv stack: no layers");
    int in = in_channels;
    for (int c : cfg.channels) {
      blocks_.push_back(std::make_unique<nn::ConvBnAct<T>>(in, c, cfg.kernel, cfg.stride, cfg.pad, true, rng));
      in = c;
    }
  }

  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) {
    Var<T> h = x;
    for (auto& b : blocks_) h = b->forward(h, ctx);
    return h;
  }

  int out_channels() const { return blocks_.back()->conv().out_channels(); }

  /// Spatial size after the stack for an input of `size` pixels.
  int output_size(int size) const {
    for (const auto& b : blocks_) size = b->conv().output_size(size);
    return size;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->visit(nn::join_name(prefix, std::to_string(i)), v);
  }

 private:
  std::vector<std::unique_ptr<nn::ConvBnAct<T>>> blocks_;
};

// ---------------------------------------------------------------------------
// Backbones

template <class T>
class Backbone : public Module<T> {
 public:
  /// (N, 3, H, W) -> feature map (N, C, h, w).
  virtual Var<T> forward(const Var<T>& x, const ForwardContext& ctx) = 0;
  virtual int out_channels() const = 0;
  virtual int feature_size(int input_size) const = 0;
};

template <class T>
class ToyCnn final : public Backbone<T> {
 public:
  ToyCnn(const BackboneConfig& cfg, std::mt19937_64& rng) : stack_(3, cfg.convs, rng) {}
  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) override { return stack_.forward(x, ctx); }
  int out_channels() const override { return stack_.out_channels(); }
  int feature_size(int input_size) const override { return stack_.output_size(input_size); }
  void visit(const std::string& prefix, const StateVisitor<T>& v) override { stack_.visit(prefix, v); }

 private:
  ConvStack<T> stack_;
};

template <class T>
using BackboneFactory = std::function<std::unique_ptr<Backbone<T>>(const BackboneConfig&, std::mt19937_64&)>;

/// Backbones by id. Larger pretrained networks plug in by registering here.
template <class T>
std::map<std::string, BackboneFactory<T>>& backbone_registry() {
  static std::map<std::string, BackboneFactory<T>> registry{
      {"toy-cnn", [](const BackboneConfig& c, std::mt19937_64& rng) { return std::make_unique<ToyCnn<T>>(c, rng); }}};
  return registry;
}

template <class T>
std::unique_ptr<Backbone<T>> make_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
  auto& reg = backbone_registry<T>();
  const auto it = reg.find(cfg.id);
  if (it == reg.end()) throw ConfigError("unknown backbone '" + cfg.id + "'");
  return it->second(cfg, rng);
}

// ---------------------------------------------------------------------------
// Branches

/// Attention pooling, or plain average pooling when attention is disabled.
template <class T>
class SpatialPool : public Module<T> {
 public:
  SpatialPool(int channels, int heads, bool attention, std::mt19937_64& rng) {
    if (attention) attn_ = std::make_unique<nn::AttentionPool<T>>(channels, heads, rng);
  }
  Var<T> forward(const Var<T>& x) const { return attn_ ? attn_->forward(x) : nn::global_avg_pool(x); }
  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    if (attn_) attn_->visit(prefix, v);
  }

 private:
  std::unique_ptr<nn::AttentionPool<T>> attn_;
};

/// Eye patch (N, 3, 36, 60) -> (N, 52).
template <class T>
class LocalBranch : public Module<T> {
 public:
  LocalBranch(const LocalBranchConfig& cfg, bool attention, std::mt19937_64& rng)
      : cfg_(cfg), convs_(3, cfg.convs, rng), pool_(convs_.out_channels(), cfg.heads, attention, rng),
        fc_(convs_.out_channels(), cfg.out_dim, rng) {}

  Var<T> forward(const Var<T>& patch, const ForwardContext& ctx) {
    const auto& s = patch.shape();
    SLYK_EXPECT(s.size() == 4 && s[1] == 3 && s[2] == cfg_.patch_h && s[3] == cfg_.patch_w,
                "local branch expects (N, 3, " << cfg_.patch_h << ", " << cfg_.patch_w << "), got "
                                               << nn::to_string(s));
    return fc_.forward(pool_.forward(convs_.forward(patch, ctx)));
  }

  int out_dim() const noexcept { return cfg_.out_dim; }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    convs_.visit(nn::join_name(prefix, "convs"), v);
    pool_.visit(nn::join_name(prefix, "attention"), v);
    fc_.visit(nn::join_name(prefix, "fc"), v);
  }

 private:
  LocalBranchConfig cfg_;
  ConvStack<T> convs_;
  SpatialPool<T> pool_;
  nn::Linear<T> fc_;
};

/// Face (N, 3, H, W) -> (N, D_g).
template <class T>
class GlobalBranch : public Module<T> {
 public:
  GlobalBranch(const EncoderConfig& cfg, std::mt19937_64& rng)
      : h_(cfg.face_h), w_(cfg.face_w), backbone_(make_backbone<T>(cfg.backbone, rng)),
        pool_(backbone_->out_channels(), cfg.global_heads, cfg.use_attention, rng) {}

  Var<T> forward(const Var<T>& face, const ForwardContext& ctx) {
    const auto& s = face.shape();
    SLYK_EXPECT(s.size() == 4 && s[1] == 3 && s[2] == h_ && s[3] == w_,
                "global branch expects (N, 3, " << h_ << ", " << w_ << "), got " << nn::to_string(s));
    return pool_.forward(backbone_->forward(face, ctx));
  }

  int out_dim() const { return backbone_->out_channels(); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    backbone_->visit(nn::join_name(prefix, "backbone"), v);
    pool_.visit(nn::join_name(prefix, "attention"), v);
  }

 private:
  int h_, w_;
  std::unique_ptr<Backbone<T>> backbone_;
  SpatialPool<T> pool_;
};

/// Column ranges of the concatenated representation y.
struct EncoderLayout {
  int global_begin = 0, global_dim = 0;
  int left_begin = 0, right_begin = 0, local_dim = 0;
  int total = 0;
};

/// y = global ⊕ left ⊕ right (disabled branches are omitted).
template <class T>
class Encoder : public Module<T> {
 public:
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    SLYK_EXPECT(cfg.use_global || cfg.use_local, "encoder: at least one of the global and local branches is needed");
    if (cfg.use_global) global_ = std::make_unique<GlobalBranch<T>>(cfg, rng);
    if (cfg.use_local) {
      left_ = std::make_unique<LocalBranch<T>>(cfg.local, cfg.use_attention, rng);
      right_ = std::make_unique<LocalBranch<T>>(cfg.local, cfg.use_attention, rng);
    }
    layout_.global_dim = global_ ? global_->out_dim() : 0;
    layout_.local_dim = left_ ? left_->out_dim() : 0;
    layout_.left_begin = layout_.global_dim;
    layout_.right_begin = layout_.global_dim + layout_.local_dim;
    layout_.total = layout_.global_dim + 2 * layout_.local_dim;
  }

  Var<T> forward(const Var<T>& face, const Var<T>& left, const Var<T>& right, const ForwardContext& ctx) {
    std::vector<Var<T>> parts;
    if (global_) parts.push_back(global_->forward(face, ctx));
    if (left_) {
      parts.push_back(left_->forward(left, ctx));
      parts.push_back(right_->forward(right, ctx));
    }
    return parts.size() == 1 ? parts.front() : nn::concat_cols(parts);
  }

  const EncoderLayout& layout() const noexcept { return layout_; }
  int out_dim() const noexcept { return layout_.total; }
  const EncoderConfig& config() const noexcept { return cfg_; }
  GlobalBranch<T>* global_branch() noexcept { return global_.get(); }
  LocalBranch<T>* left_branch() noexcept { return left_.get(); }
  LocalBranch<T>* right_branch() noexcept { return right_.get(); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    if (global_) global_->visit(nn::join_name(prefix, "global"), v);
    if (left_) {
      left_->visit(nn::join_name(prefix, "left"), v);
      right_->visit(nn::join_name(prefix, "right"), v);
    }
  }

 private:
  EncoderConfig cfg_;
  EncoderLayout layout_;
  std::unique_ptr<GlobalBranch<T>> global_;
  std::unique_ptr<LocalBranch<T>> left_, right_;
};

// ---------------------------------------------------------------------------
// Heads

/// Linear layers with (optional BN) + ReLU after every layer but the last.
template <class T>
class HeadMlp : public Module<T> {
 public:
  HeadMlp(const std::vector<int>& dims, bool batch_norm, std::mt19937_64& rng) {
    SLYK_EXPECT(dims.size() >= 2, "head: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      fcs_.push_back(std::make_unique<nn::Linear<T>>(dims[i], dims[i + 1], rng));
      if (batch_norm && i + 2 < dims.size()) bns_.push_back(std::make_unique<nn::BatchNorm<T>>(dims[i + 1]));
    }
  }

  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) {
    Var<T> h = x;
    for (std::size_t i = 0; i < fcs_.size(); ++i) {
      h = fcs_[i]->forward(h);
      if (i + 1 == fcs_.size()) break;
      if (!bns_.empty()) h = bns_[i]->forward(h, ctx);
      h = nn::relu(h);
    }
    return h;
  }

  int in_dim() const { return fcs_.front()->in_features(); }
  int out_dim() const { return fcs_.back()->out_features(); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < fcs_.size(); ++i) {
      fcs_[i]->visit(nn::join_name(prefix, "fc" + std::to_string(i)), v);
      if (i < bns_.size()) bns_[i]->visit(nn::join_name(prefix, "bn" + std::to_string(i)), v);
    }
  }

 private:
  std::vector<std::unique_ptr<nn::Linear<T>>> fcs_;
  std::vector<std::unique_ptr<nn::BatchNorm<T>>> bns_;
};

struct HeadConfig {
  std::vector<int> projection{1536, 1024, 1024};  // (hidden-in, hidden, out)
  std::vector<int> prediction{1024, 1024, 1024};  // (in, hidden, out)
  bool batch_norm = true;
};

/// Layer widths of the projection MLP for a representation of width `in`: an
/// input adapter to hidden-in is inserted when the widths differ.
inline std::vector<int> projection_dims(int in, const std::vector<int>& spec) {
  std::vector<int> dims{in};
  if (spec.front() != in) dims.push_back(spec.front());
  dims.insert(dims.end(), spec.begin() + 1, spec.end());
  return dims;
}

// ---------------------------------------------------------------------------
// Online / target pair

template <class T>
struct EncoderOutput {
  Var<T> y, z, q;  // q is undefined for the target network
};

struct PairConfig {
  EncoderConfig encoder;
  HeadConfig heads;
};

template <class T>
class OnlineNetwork : public Module<T> {
 public:
  OnlineNetwork(const PairConfig& cfg, std::mt19937_64& rng)
      : encoder(cfg.encoder, rng), projection(projection_dims(encoder.out_dim(), cfg.heads.projection),
                                              cfg.heads.batch_norm, rng),
        prediction(checked_prediction(cfg), cfg.heads.batch_norm, rng) {}

  EncoderOutput<T> forward(const Var<T>& face, const Var<T>& left, const Var<T>& right, const ForwardContext& ctx) {
    EncoderOutput<T> o;
    o.y = encoder.forward(face, left, right, ctx);
    o.z = projection.forward(o.y, ctx);
    o.q = prediction.forward(o.z, ctx);
    return o;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    encoder.visit(nn::join_name(prefix, "encoder"), v);
    projection.visit(nn::join_name(prefix, "projection"), v);
    prediction.visit(nn::join_name(prefix, "prediction"), v);
  }

  Encoder<T> encoder;
  HeadMlp<T> projection;
  HeadMlp<T> prediction;

 private:
  static std::vector<int> checked_prediction(const PairConfig& cfg) {
    SLYK_EXPECT(cfg.heads.prediction.front() == cfg.heads.projection.back(),
                "prediction input " << cfg.heads.prediction.front() << " != projection output "
                                    << cfg.heads.projection.back());
    return cfg.heads.prediction;
  }
};

template <class T>
class TargetNetwork : public Module<T> {
 public:
  TargetNetwork(const PairConfig& cfg, std::mt19937_64& rng)
      : encoder(cfg.encoder, rng),
        projection(projection_dims(encoder.out_dim(), cfg.heads.projection), cfg.heads.batch_norm, rng) {}

  EncoderOutput<T> forward(const Var<T>& face, const Var<T>& left, const Var<T>& right, const ForwardContext& ctx) {
    EncoderOutput<T> o;
    o.y = encoder.forward(face, left, right, ctx);
    o.z = projection.forward(o.y, ctx);
    return o;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    encoder.visit(nn::join_name(prefix, "encoder"), v);
    projection.visit(nn::join_name(prefix, "projection"), v);
  }

  Encoder<T> encoder;
  HeadMlp<T> projection;
};

/// τ(k) = 1 - (1 - τ_base)(cos(πk/K) + 1)/2
inline double tau_schedule(long long k, long long total, double tau_base) {
  SLYK_EXPECT(total > 0, "tau_schedule: total steps must be positive");
  SLYK_EXPECT(k >= 0 && k <= total, "tau_schedule: step " << k << " outside [0, " << total << "]");
  SLYK_EXPECT(tau_base > 0.0 && tau_base < 1.0, "tau_schedule: base " << tau_base << " outside (0, 1)");
  const double c = std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(total));
  return 1.0 - (1.0 - tau_base) * (c + 1.0) / 2.0;
}

/// Online network θ and its EMA copy ξ. The target starts as an exact copy and
/// never receives gradients.
template <class T>
class NetworkPair {
 public:
  NetworkPair(const PairConfig& cfg, std::mt19937_64& rng) : online(cfg, rng), target(cfg, rng) {
    auto on = online_tracked();
    auto tg = target.parameters("");
    SLYK_EXPECT(on.size() == tg.size(), "network pair: online/target parameter count mismatch");
    for (std::size_t i = 0; i < on.size(); ++i) {
      SLYK_EXPECT(on[i].var.shape() == tg[i].var.shape(), "network pair: shape mismatch at " << tg[i].name);
      tg[i].var.mutable_value() = on[i].var.value();
      tg[i].var.set_requires_grad(false);
    }
  }

  /// ξ := τ ξ + (1 - τ) θ over encoder and projection parameters.
  void ema_update(double tau) {
    SLYK_EXPECT(tau >= 0.0 && tau <= 1.0, "ema_update: tau " << tau << " outside [0, 1]");
    auto on = online_tracked();
    auto tg = target.parameters("");
    SLYK_EXPECT(on.size() == tg.size(), "ema_update: parameter count mismatch");
    const T a = static_cast<T>(tau), b = static_cast<T>(1.0 - tau);
    for (std::size_t i = 0; i < on.size(); ++i) {
      SLYK_EXPECT(on[i].var.shape() == tg[i].var.shape(), "ema_update: shape mismatch at " << tg[i].name);
      auto& xi = tg[i].var.mutable_value();
      const auto& theta = on[i].var.value();
      if (tau == 1.0) continue;
      if (tau == 0.0) {
        xi = theta;
        continue;
      }
      for (std::size_t j = 0; j < xi.size(); ++j) xi[j] = a * xi[j] + b * theta[j];
    }
  }

  /// Online parameters that have a target counterpart (everything but the
  /// prediction head), in the target's visit order.
  std::vector<nn::NamedParameter<T>> online_tracked() {
    auto out = online.encoder.parameters("encoder");
    auto proj = online.projection.parameters("projection");
    out.insert(out.end(), proj.begin(), proj.end());
    return out;
  }

  OnlineNetwork<T> online;
  TargetNetwork<T> target;
};

}  // namespace slyk::net
