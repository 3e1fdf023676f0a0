#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "slyk/ops.hpp"

namespace slyk::nn {

/// Per-call forward settings. Modules read `training` for batch norm and
/// dropout behaviour.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <class T>
struct StateVisitor {
  std::function<void(const std::string&, Var<T>&)> parameter;
  std::function<void(const std::string&, Tensor<T>&)> buffer;
};

template <class T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

/// Owner of named parameters and buffers. Non-copyable: parameters are shared
/// handles, so a copy would alias the original's weights.
template <class T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) = default;
  Module& operator=(Module&&) = default;
  virtual ~Module() = default;

  virtual void visit(const std::string& prefix, const StateVisitor<T>& v) = 0;

  std::vector<NamedParameter<T>> parameters(const std::string& prefix = "") {
    std::vector<NamedParameter<T>> out;
    visit(prefix, {[&](const std::string& n, Var<T>& p) { out.push_back({n, p}); },
                   [](const std::string&, Tensor<T>&) {}});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto& p : parameters()) total += p.var.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var.zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& p : parameters()) p.var.set_requires_grad(on);
  }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <class T>
Tensor<T> fan_in_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Tensor<T> xavier_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
class Linear : public Module<T> {
 public:
  Linear(int in, int out, std::mt19937_64& rng)
      : in_(in), out_(out), weight_(parameter(fan_in_uniform<T>({out, in}, in, rng))),
        bias_(parameter(fan_in_uniform<T>({out}, in, rng))) {
    SLYK_EXPECT(in > 0 && out > 0, "Linear: dimensions must be positive, got " << in << " -> " << out);
  }

  Var<T> forward(const Var<T>& x) const {
    SLYK_EXPECT(x.value().rank() == 2 && x.dim(1) == in_,
                "Linear(" << in_ << " -> " << out_ << "): got input " << to_string(x.shape()));
    return linear(x, weight_, &bias_);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    v.parameter(join_name(prefix, "weight"), weight_);
    v.parameter(join_name(prefix, "bias"), bias_);
  }

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }
  Var<T>& weight() noexcept { return weight_; }

 private:
  int in_, out_;
  Var<T> weight_, bias_;
};

template <class T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng)
      : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad),
        weight_(parameter(fan_in_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng))),
        bias_(parameter(fan_in_uniform<T>({out}, in * kernel * kernel, rng))) {
    SLYK_EXPECT(in > 0 && out > 0 && kernel > 0 && stride > 0 && pad >= 0, "Conv2d: invalid geometry");
  }

  Var<T> forward(const Var<T>& x) const {
    SLYK_EXPECT(x.value().rank() == 4 && x.dim(1) == in_,
                "Conv2d expects " << in_ << " input channels, got " << to_string(x.shape()));
    return conv2d(x, weight_, &bias_, stride_, pad_);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    v.parameter(join_name(prefix, "weight"), weight_);
    v.parameter(join_name(prefix, "bias"), bias_);
  }

  int out_channels() const noexcept { return out_; }
  int output_size(int in_size) const noexcept { return (in_size + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  int in_, out_, kernel_, stride_, pad_;
  Var<T> weight_, bias_;
};

template <class T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps), gamma_(parameter(Tensor<T>({channels}, T(1)))),
        beta_(parameter(Tensor<T>({channels}, T(0)))), running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)) {}

  /// In training mode uses batch statistics and updates the running estimates.
  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) {
    return batch_norm(x, gamma_, beta_, BatchNormBuffers<T>{&running_mean_, &running_var_, momentum_, eps_},
                      ctx.training);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    v.parameter(join_name(prefix, "gamma"), gamma_);
    v.parameter(join_name(prefix, "beta"), beta_);
    v.buffer(join_name(prefix, "running_mean"), running_mean_);
    v.buffer(join_name(prefix, "running_var"), running_var_);
  }

 private:
  int channels_;
  double momentum_, eps_;
  Var<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
};

/// conv -> batch norm -> optional ReLU
template <class T>
class ConvBnAct : public Module<T> {
 public:
  ConvBnAct(int in, int out, int kernel, int stride, int pad, bool relu, std::mt19937_64& rng)
      : conv_(in, out, kernel, stride, pad, rng), bn_(out), relu_(relu) {}

  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) {
    auto y = bn_.forward(conv_.forward(x), ctx);
    return relu_ ? relu(y) : y;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    conv_.visit(join_name(prefix, "conv"), v);
    bn_.visit(join_name(prefix, "bn"), v);
  }

  const Conv2d<T>& conv() const noexcept { return conv_; }

 private:
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
  bool relu_;
};

/// Multi-head self-attention over the spatial positions of a feature map,
/// followed by averaging over positions: (N, C, H, W) -> (N, C).
/// The attended tokens are added back to the input tokens (residual).
template <class T>
class AttentionPool : public Module<T> {
 public:
  AttentionPool(int channels, int heads, std::mt19937_64& rng)
      : channels_(channels), heads_(heads),
        wq_(parameter(xavier_uniform<T>({channels, channels}, channels, channels, rng))),
        wk_(parameter(xavier_uniform<T>({channels, channels}, channels, channels, rng))),
        wv_(parameter(xavier_uniform<T>({channels, channels}, channels, channels, rng))),
        bq_(parameter(Tensor<T>({channels}))), bk_(parameter(Tensor<T>({channels}))),
        bv_(parameter(Tensor<T>({channels}))), out_(channels, channels, rng) {
    SLYK_EXPECT(heads > 0 && channels % heads == 0,
                "attention: " << heads << " heads do not divide " << channels << " channels");
    out_.visit("", {[](const std::string& n, Var<T>& p) {
                      if (n == "bias") p.mutable_value().fill(T(0));
                    },
                    [](const std::string&, Tensor<T>&) {}});
  }

  Var<T> forward(const Var<T>& x) const {
    SLYK_EXPECT(x.value().rank() == 4 && x.dim(1) == channels_,
                "attention expects " << channels_ << " channels, got " << to_string(x.shape()));
    const int n = x.dim(0);
    auto tokens = to_tokens(x);
    auto q = linear(tokens, wq_, &bq_);
    auto k = linear(tokens, wk_, &bk_);
    auto v = linear(tokens, wv_, &bv_);
    auto attended = out_.forward(attention(q, k, v, n, heads_));
    return token_mean(add(tokens, attended), n);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    v.parameter(join_name(prefix, "q.weight"), wq_);
    v.parameter(join_name(prefix, "q.bias"), bq_);
    v.parameter(join_name(prefix, "k.weight"), wk_);
    v.parameter(join_name(prefix, "k.bias"), bk_);
    v.parameter(join_name(prefix, "v.weight"), wv_);
    v.parameter(join_name(prefix, "v.bias"), bv_);
    out_.visit(join_name(prefix, "out"), v);
  }

 private:
  int channels_, heads_;
  Var<T> wq_, wk_, wv_, bq_, bk_, bv_;
  Linear<T> out_;
};

/// Fully connected stack with ReLU between layers (none after the last).
template <class T>
class Mlp : public Module<T> {
 public:
  Mlp(const std::vector<int>& dims, std::mt19937_64& rng) {
    SLYK_EXPECT(dims.size() >= 2, "Mlp: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.push_back(std::make_unique<Linear<T>>(dims[i], dims[i + 1], rng));
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i]->forward(h);
      if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit(join_name(prefix, std::to_string(i)), v);
  }

  int in_features() const { return layers_.front()->in_features(); }
  int out_features() const { return layers_.back()->out_features(); }

 private:
  std::vector<std::unique_ptr<Linear<T>>> layers_;
};

// ---------------------------------------------------------------------------
// State utilities

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  bool is_parameter;
};

/// Flat view of every parameter value and buffer, in visit order.
template <class T>
std::vector<NamedTensor<T>> state_tensors(Module<T>& m, const std::string& prefix = "") {
  std::vector<NamedTensor<T>> out;
  m.visit(prefix, {[&](const std::string& n, Var<T>& p) { out.push_back({n, &p.mutable_value(), true}); },
                   [&](const std::string& n, Tensor<T>& b) { out.push_back({n, &b, false}); }});
  return out;
}

/// Copies every parameter and buffer of `src` into `dst` (same architecture).
template <class T>
void copy_state(Module<T>& src, Module<T>& dst) {
  auto s = state_tensors(src);
  auto d = state_tensors(dst);
  SLYK_EXPECT(s.size() == d.size(), "copy_state: " << s.size() << " vs " << d.size() << " tensors");
  for (std::size_t i = 0; i < s.size(); ++i) {
    SLYK_EXPECT(s[i].name == d[i].name && s[i].tensor->shape() == d[i].tensor->shape(),
                "copy_state: mismatch at " << s[i].name << " / " << d[i].name);
    *d[i].tensor = *s[i].tensor;
  }
}

}  // namespace slyk::nn
