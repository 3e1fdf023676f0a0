#pragma once

// First-order optimizers over named parameters. State tensors are exposed by
// name so checkpoints can carry them.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "slyk/checkpoint.hpp"
#include "slyk/layers.hpp"

namespace slyk::optim {

template <class T>
class Optimizer {
 public:
  explicit Optimizer(std::vector<nn::NamedParameter<T>> params, double lr) : params_(std::move(params)), lr_(lr) {}
  virtual ~Optimizer() = default;

  /// Applies one update from the accumulated gradients. Parameters that do
  /// not require grad or never received a gradient are left untouched.
  virtual void step() = 0;
  virtual void save_state(ckpt::Checkpoint& c, const std::string& prefix) const = 0;
  virtual void load_state(const ckpt::Checkpoint& c, const std::string& prefix) = 0;

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  long long steps() const noexcept { return steps_; }
  const std::vector<nn::NamedParameter<T>>& params() const noexcept { return params_; }

 protected:
  bool active(const nn::NamedParameter<T>& p) const { return p.var.requires_grad() && p.var.has_grad(); }

  std::vector<nn::NamedParameter<T>> params_;
  double lr_;
  long long steps_ = 0;
};

/// SGD with heavy-ball momentum: v = mu v + (g + wd p); p -= lr v.
template <class T>
class Sgd : public Optimizer<T> {
 public:
  Sgd(std::vector<nn::NamedParameter<T>> params, double lr, double momentum, double weight_decay)
      : Optimizer<T>(std::move(params), lr), momentum_(momentum), wd_(weight_decay) {
    for (auto& p : this->params_) velocity_.emplace_back(p.var.shape());
  }

  void step() override {
    const T lr = static_cast<T>(this->lr_), mu = static_cast<T>(momentum_), wd = static_cast<T>(wd_);
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      auto& p = this->params_[i];
      if (!this->active(p)) continue;
      auto w = p.var.mutable_value().matrix(1);
      auto g = p.var.grad().matrix(1);
      auto v = velocity_[i].matrix(1);
      if (wd != T(0)) {
        v = mu * v + g + wd * w;
      } else {
        v = mu * v + g;
      }
      w -= lr * v;
    }
    ++this->steps_;
  }

  void save_state(ckpt::Checkpoint& c, const std::string& prefix) const override {
    for (std::size_t i = 0; i < this->params_.size(); ++i)
      c.add(prefix + ".velocity." + this->params_[i].name, velocity_[i]);
    c.metadata[prefix + ".steps"] = std::to_string(this->steps_);
  }

  void load_state(const ckpt::Checkpoint& c, const std::string& prefix) override {
    for (std::size_t i = 0; i < this->params_.size(); ++i)
      velocity_[i] = fetch(c, prefix + ".velocity." + this->params_[i].name, velocity_[i]);
    const auto it = c.metadata.find(prefix + ".steps");
    if (it == c.metadata.end()) throw ConfigError("optimizer state '" + prefix + ".steps' missing");
    this->steps_ = std::stoll(it->second);
  }

 private:
  static nn::Tensor<T> fetch(const ckpt::Checkpoint& c, const std::string& name, const nn::Tensor<T>& like) {
    const auto* r = c.find(name);
    if (!r || r->shape != like.shape()) throw ConfigError("optimizer state '" + name + "' missing or mis-shaped");
    return r->template as<T>();
  }

  double momentum_, wd_;
  std::vector<nn::Tensor<T>> velocity_;
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8) and L2 weight
/// decay folded into the gradient.
template <class T>
class Adam : public Optimizer<T> {
 public:
  Adam(std::vector<nn::NamedParameter<T>> params, double lr, double weight_decay = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : Optimizer<T>(std::move(params), lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& p : this->params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  void step() override {
    ++this->steps_;
    const double t = static_cast<double>(this->steps_);
    const T c1 = static_cast<T>(1.0 - std::pow(b1_, t)), c2 = static_cast<T>(1.0 - std::pow(b2_, t));
    const T lr = static_cast<T>(this->lr_), b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_),
            eps = static_cast<T>(eps_), wd = static_cast<T>(wd_);
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      auto& p = this->params_[i];
      if (!this->active(p)) continue;
      auto w = p.var.mutable_value().matrix(1).array();
      auto g = p.var.grad().matrix(1).array();
      auto m = m_[i].matrix(1).array();
      auto v = v_[i].matrix(1).array();
      if (wd != T(0)) {
        m = b1 * m + (T(1) - b1) * (g + wd * w);
        v = b2 * v + (T(1) - b2) * (g + wd * w).square();
      } else {
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g.square();
      }
      w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
  }

  void save_state(ckpt::Checkpoint& c, const std::string& prefix) const override {
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      c.add(prefix + ".m." + this->params_[i].name, m_[i]);
      c.add(prefix + ".v." + this->params_[i].name, v_[i]);
    }
    c.metadata[prefix + ".steps"] = std::to_string(this->steps_);
  }

  void load_state(const ckpt::Checkpoint& c, const std::string& prefix) override {
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      m_[i] = fetch(c, prefix + ".m." + this->params_[i].name, m_[i]);
      v_[i] = fetch(c, prefix + ".v." + this->params_[i].name, v_[i]);
    }
    const auto it = c.metadata.find(prefix + ".steps");
    if (it == c.metadata.end()) throw ConfigError("optimizer state '" + prefix + ".steps' missing");
    this->steps_ = std::stoll(it->second);
  }

 private:
  static nn::Tensor<T> fetch(const ckpt::Checkpoint& c, const std::string& name, const nn::Tensor<T>& like) {
    const auto* r = c.find(name);
    if (!r || r->shape != like.shape()) throw ConfigError("optimizer state '" + name + "' missing or mis-shaped");
    return r->template as<T>();
  }

  double wd_, b1_, b2_, eps_;
  std::vector<nn::Tensor<T>> m_, v_;
};

template <class T>
std::unique_ptr<Optimizer<T>> make(const std::string& name, std::vector<nn::NamedParameter<T>> params, double lr,
                                   double momentum, double weight_decay) {
  if (name == "sgd") return std::make_unique<Sgd<T>>(std::move(params), lr, momentum, weight_decay);
  if (name == "adam") return std::make_unique<Adam<T>>(std::move(params), lr, weight_decay);
  throw ConfigError("unknown optimizer '" + name + "'");
}

}  // namespace slyk::optim
