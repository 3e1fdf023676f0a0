#pragma once

// Self-supervised pretraining of the online/target pair and supervised
// fine-tuning of the gaze model, with plateau LR decay, early stopping,
// resumable sessions and leave-one-subject-out cross-validation.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "slyk/augmentation.hpp"
#include "slyk/checkpoint.hpp"
#include "slyk/config.hpp"
#include "slyk/data.hpp"
#include "slyk/inference.hpp"
#include "slyk/optim.hpp"

namespace slyk::train {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Log = std::function<void(const std::string&)>;

// Stream identifiers for derive_seed.
enum Stream : std::uint64_t {
  kInitOnline = 1,
  kInitTarget = 2,
  kInitModel = 3,
  kShuffle = 4,
  kViews = 5,
  kDropout = 6,
};

// ---------------------------------------------------------------------------
// Schedules

/// An evaluation improves iff metric < best - min_delta.
class LrOnPlateau {
 public:
  LrOnPlateau(double factor, int patience, double min_delta, double min_lr)
      : factor_(factor), patience_(patience), min_delta_(min_delta), min_lr_(min_lr) {}
  explicit LrOnPlateau(const config::PlateauSection& s) : LrOnPlateau(s.factor, s.patience, s.min_delta, s.min_lr) {}

  /// New learning rate after observing `metric`.
  double step(double lr, double metric) {
    if (!std::isfinite(metric)) throw DomainError("lr_on_plateau: metric is not finite");
    if (metric < best_ - min_delta_) {
      best_ = metric;
      bad_ = 0;
      return lr;
    }
    if (++bad_ < patience_) return lr;
    bad_ = 0;
    return std::max(lr * factor_, min_lr_);
  }

  double best() const noexcept { return best_; }
  int bad_epochs() const noexcept { return bad_; }
  void restore(double best, int bad) noexcept {
    best_ = best;
    bad_ = bad;
  }

 private:
  double factor_;
  int patience_;
  double min_delta_, min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Records `metric`; returns true once `patience` consecutive evaluations
  /// failed to improve.
  bool update(double metric) {
    if (!std::isfinite(metric)) throw DomainError("early stopping: metric is not finite");
    improved_ = metric < best_ - min_delta_;
    if (improved_) {
      best_ = metric;
      bad_ = 0;
    } else {
      ++bad_;
    }
    return bad_ >= patience_;
  }

  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }
  int bad_epochs() const noexcept { return bad_; }
  void restore(double best, int bad) noexcept {
    best_ = best;
    bad_ = bad;
  }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
  bool improved_ = false;
};

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, {kShuffle, static_cast<std::uint64_t>(epoch)});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Full batches only; a dataset smaller than one batch forms a single batch.
inline int batches_per_epoch(std::size_t n, int batch) {
  return std::max(1, static_cast<int>(n / static_cast<std::size_t>(batch)));
}

inline std::vector<std::size_t> batch_indices(const std::vector<std::size_t>& order, int b, int batch) {
  const std::size_t begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(batch);
  const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

template <class T>
bool all_finite(const nn::Tensor<T>& t) {
  for (T v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

inline std::string exact(double v) { return data::csv::format_double(v); }
inline double parse_exact(const std::string& s) { return std::stod(s); }

template <class T>
std::vector<nn::Tensor<T>> snapshot(nn::Module<T>& m) {
  std::vector<nn::Tensor<T>> out;
  for (const auto& s : nn::state_tensors(m)) out.push_back(*s.tensor);
  return out;
}

template <class T>
void restore(nn::Module<T>& m, const std::vector<nn::Tensor<T>>& snap) {
  auto st = nn::state_tensors(m);
  SLYK_EXPECT(st.size() == snap.size(), "restore: state size mismatch");
  for (std::size_t i = 0; i < st.size(); ++i) *st[i].tensor = snap[i];
}

inline std::string get_meta(const ckpt::Checkpoint& c, const std::string& key) {
  const auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw DataError("checkpoint metadata has no '" + key + "'");
  return it->second;
}

inline void stamp(ckpt::Checkpoint& c, const config::RunConfig& cfg, const std::string& kind) {
  c.metadata["format"] = "slyk";
  c.metadata["format_version"] = "1";
  c.metadata["kind"] = kind;
  c.metadata["config"] = config::to_json(cfg).dump();
  c.metadata["config_hash"] = config::hash(cfg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainHistory {
  std::vector<double> epoch_loss;  // mean over each completed epoch
  std::vector<double> step_loss;
  std::vector<double> tau;  // value used for the EMA after each step
};

class PretrainSession {
 public:
  PretrainSession(const config::RunConfig& cfg, const std::vector<data::Sample>& samples)
      : cfg_(cfg), samples_(samples), pair_(make_pair(cfg)), face_pipe_(config::augmentation_config(cfg)),
        patch_pipe_(config::patch_augmentation_config(cfg)) {
    if (samples.size() < 2) throw DataError("pretraining needs at least 2 samples with eye patches");
    batches_ = detail::batches_per_epoch(samples.size(), cfg.pretrain.batch_size);
    total_ = static_cast<long long>(batches_) * cfg.pretrain.epochs;
    opt_ = optim::make<float>(cfg.pretrain.optimizer, pair_.online.parameters(), cfg.pretrain.lr,
                              cfg.pretrain.momentum, cfg.pretrain.weight_decay);
  }

  bool done() const noexcept { return step_ >= total_; }
  long long steps_done() const noexcept { return step_; }
  long long total_steps() const noexcept { return total_; }
  int batches_per_epoch() const noexcept { return batches_; }
  const PretrainHistory& history() const noexcept { return history_; }
  net::NetworkPair<float>& pair() noexcept { return pair_; }
  optim::Optimizer<float>& optimizer() noexcept { return *opt_; }

  /// One optimizer step followed by the EMA update of the target.
  double step() {
    SLYK_EXPECT(!done(), "pretrain: all steps already taken");
    const int epoch = static_cast<int>(step_ / batches_);
    const int b = static_cast<int>(step_ % batches_);
    const auto order = detail::epoch_order(samples_.size(), cfg_.seed, epoch);
    const auto idx = detail::batch_indices(order, b, cfg_.pretrain.batch_size);

    std::vector<cv::Mat> fv, fv2, lv, lv2, rv, rv2;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& s = samples_[idx[j]];
      const auto seed = derive_seed(cfg_.seed, {kViews, static_cast<std::uint64_t>(step_), j});
      auto f = augment::generate_views(s.face, face_pipe_, derive_seed(seed, {0}));
      auto l = augment::generate_views(s.left_patch, patch_pipe_, derive_seed(seed, {1}));
      auto r = augment::generate_views(s.right_patch, patch_pipe_, derive_seed(seed, {2}));
      fv.push_back(f.v);
      fv2.push_back(f.v2);
      lv.push_back(l.v);
      lv2.push_back(l.v2);
      rv.push_back(r.v);
      rv2.push_back(r.v2);
    }
    const auto batch = [](const std::vector<cv::Mat>& m) {
      std::vector<const cv::Mat*> p;
      for (const auto& x : m) p.push_back(&x);
      return nn::constant(image::to_batch<float>(p));
    };
    const auto face = batch(fv), face2 = batch(fv2), left = batch(lv), left2 = batch(lv2), right = batch(rv),
               right2 = batch(rv2);

    nn::ForwardContext ctx{true, nullptr};
    nn::Tensor<float> zt, zt2;
    {
      nn::NoGradGuard guard;
      zt = pair_.target.forward(face, left, right, ctx).z.value();
      zt2 = pair_.target.forward(face2, left2, right2, ctx).z.value();
    }
    opt_->zero_grad();
    const auto o = pair_.online.forward(face, left, right, ctx);
    const auto o2 = pair_.online.forward(face2, left2, right2, ctx);
    for (const nn::Tensor<float>* t : {&o.q.value(), &o2.q.value(), &o.z.value(), &o2.z.value(), &std::as_const(zt),
                                       &std::as_const(zt2)})
      if (!detail::all_finite(*t))
        fail(epoch, idx, std::numeric_limits<double>::quiet_NaN(), "non-finite embeddings");
    nn::Var<float> loss;
    try {
      loss = nn::ssl_loss(o.q, o2.q, o.z, o2.z, zt, zt2, config::ssl_terms(cfg_));
    } catch (const DomainError& e) {
      fail(epoch, idx, std::numeric_limits<double>::quiet_NaN(), e.what());
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value)) fail(epoch, idx, value);
    loss.backward();
    opt_->step();
    const double tau = net::tau_schedule(step_, std::max<long long>(total_ - 1, 1), cfg_.pretrain.tau_base);
    pair_.ema_update(tau);

    history_.step_loss.push_back(value);
    history_.tau.push_back(tau);
    epoch_sum_ += value;
    ++epoch_count_;
    ++step_;
    if (step_ % batches_ == 0) {
      history_.epoch_loss.push_back(epoch_sum_ / epoch_count_);
      epoch_sum_ = 0;
      epoch_count_ = 0;
    }
    return value;
  }

  void run(const Log& log = {}) {
    while (!done()) {
      step();
      if (log && step_ % batches_ == 0)
        log("pretrain epoch " + std::to_string(history_.epoch_loss.size()) + "/" +
            std::to_string(cfg_.pretrain.epochs) + " ssl_loss " + std::to_string(history_.epoch_loss.back()) +
            " tau " + std::to_string(history_.tau.back()));
    }
  }

  /// The artifact kept after pretraining: the online encoder only.
  ckpt::Checkpoint encoder_checkpoint() {
    ckpt::Checkpoint c;
    detail::stamp(c, cfg_, "encoder");
    c.metadata["history"] = history_json().dump();
    c.add_module(pair_.online.encoder, "encoder");
    return c;
  }

  /// Full resumable state: both networks, optimizer and counters.
  ckpt::Checkpoint state_checkpoint() {
    ckpt::Checkpoint c;
    detail::stamp(c, cfg_, "pretrain_state");
    c.add_module(pair_.online, "online");
    c.add_module(pair_.target, "target");
    opt_->save_state(c, "optimizer");
    c.metadata["step"] = std::to_string(step_);
    c.metadata["epoch_sum"] = detail::exact(epoch_sum_);
    c.metadata["epoch_count"] = std::to_string(epoch_count_);
    c.metadata["history"] = history_json().dump();
    return c;
  }

  void load_state(const ckpt::Checkpoint& c) {
    if (detail::get_meta(c, "config_hash") != config::hash(cfg_))
      throw ConfigError("pretrain state was written under a different configuration");
    ckpt::load_module(c, pair_.online, "online");
    ckpt::load_module(c, pair_.target, "target");
    opt_->load_state(c, "optimizer");
    step_ = std::stoll(detail::get_meta(c, "step"));
    epoch_sum_ = detail::parse_exact(detail::get_meta(c, "epoch_sum"));
    epoch_count_ = std::stoi(detail::get_meta(c, "epoch_count"));
    const auto h = json::parse(detail::get_meta(c, "history"));
    history_.epoch_loss = h.at("epoch_loss").get<std::vector<double>>();
    history_.step_loss = h.at("step_loss").get<std::vector<double>>();
    history_.tau = h.at("tau").get<std::vector<double>>();
  }

  json history_json() const {
    return {{"epoch_loss", history_.epoch_loss}, {"step_loss", history_.step_loss}, {"tau", history_.tau}};
  }

 private:
  static net::NetworkPair<float> make_pair(const config::RunConfig& cfg) {
    auto rng = make_rng(cfg.seed, {kInitOnline});
    return net::NetworkPair<float>(config::pair_config(cfg), rng);
  }

  [[noreturn]] void fail(int epoch, const std::vector<std::size_t>& idx, double value, const std::string& cause = {}) {
    std::ostringstream os;
    os << "pretraining diverged: ssl_loss = " << value << " at step " << step_ << " (epoch " << epoch << ")";
    if (!cause.empty()) os << " [" << cause << "]";
    os << "; batch files:";
    for (auto i : idx) os << ' ' << samples_[i].file;
    double max_abs = 0;
    bool finite = true;
    for (auto& p : pair_.online.parameters())
      for (float v : p.var.value().values()) {
        finite = finite && std::isfinite(v);
        max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
      }
    os << "; online parameters " << (finite ? "finite" : "NON-FINITE") << ", max |w| = " << max_abs
       << ", lr = " << opt_->lr();
    throw TrainingError(os.str());
  }

  config::RunConfig cfg_;
  const std::vector<data::Sample>& samples_;
  net::NetworkPair<float> pair_;
  augment::Pipeline face_pipe_, patch_pipe_;
  std::unique_ptr<optim::Optimizer<float>> opt_;
  int batches_ = 0;
  long long total_ = 0, step_ = 0;
  double epoch_sum_ = 0;
  int epoch_count_ = 0;
  PretrainHistory history_;
};

// ---------------------------------------------------------------------------
// Fine-tuning

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_metric = 0;  // degrees for gaze, error rate (%) for expressions
  double val_loss = 0;
  double lr = 0;
  bool improved = false;
};

struct FinetuneHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_metric = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

/// Mean angular error in degrees.
inline double mean_angular_error(const std::vector<geometry::GazeAngles>& truth,
                                 const std::vector<geometry::GazeAngles>& pred) {
  SLYK_EXPECT(truth.size() == pred.size() && !truth.empty(), "mean_angular_error: size mismatch or empty");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += geometry::angular_error(truth[i], pred[i]);
  return s / static_cast<double>(truth.size());
}

class FinetuneSession {
 public:
  /// `ssl_init` is required when use_ssl_init is on and ignored otherwise.
  FinetuneSession(const config::RunConfig& cfg, const std::vector<const data::Sample*>& train,
                  const std::vector<const data::Sample*>& val, const ckpt::Checkpoint* ssl_init)
      : cfg_(cfg), model_(make_model(cfg)), plateau_(cfg.finetune.lr_plateau),
        stopper_(cfg.finetune.early_stop.patience, cfg.finetune.early_stop.min_delta) {
    if (train.size() < 2) throw DataError("fine-tuning needs at least 2 training samples");
    if (val.empty()) throw DataError("fine-tuning needs a non-empty validation split");
    if (cfg.ablation.use_ssl_init) {
      if (!ssl_init) throw ConfigError("ablation.use_ssl_init is on but no pretrained encoder checkpoint was given");
      ckpt::load_module(*ssl_init, model_.encoder(), "encoder");
    }
    train_ = infer::prepare(train, cfg.architecture.face_size);
    val_ = infer::prepare(val, cfg.architecture.face_size);
    classification_ = cfg.architecture.num_classes > 0;
    if (classification_) class_weights_ = inverse_frequency(train_.classes, cfg.architecture.num_classes);
    batches_ = detail::batches_per_epoch(train_.size(), cfg.finetune.batch_size);
    std::vector<nn::NamedParameter<float>> trainable;
    for (auto& p : model_.parameters())
      if (p.var.requires_grad()) trainable.push_back(p);
    opt_ = optim::make<float>(cfg.finetune.optimizer, trainable, cfg.finetune.lr, 0.9, cfg.finetune.weight_decay);
  }

  bool done() const noexcept { return finished_; }
  int epoch() const noexcept { return epoch_; }
  long long steps_done() const noexcept { return step_; }
  const FinetuneHistory& history() const noexcept { return history_; }
  pmn::GazeModel<float>& model() noexcept { return model_; }
  optim::Optimizer<float>& optimizer() noexcept { return *opt_; }
  const infer::Prepared& validation() const noexcept { return val_; }

  /// One optimizer step; the last step of an epoch also validates and
  /// applies the schedules.
  double step() {
    SLYK_EXPECT(!finished_, "finetune: training already finished");
    const auto order = detail::epoch_order(train_.size(), cfg_.seed ^ 0xF17E, epoch_);
    const auto idx = detail::batch_indices(order, batch_, cfg_.finetune.batch_size);
    auto rng = make_rng(cfg_.seed, {kDropout, static_cast<std::uint64_t>(step_)});
    nn::ForwardContext ctx{true, &rng};
    opt_->zero_grad();
    const auto o = model_.forward(nn::constant(infer::gather<float>(train_.faces, idx)),
                                  nn::constant(infer::gather<float>(train_.lefts, idx)),
                                  nn::constant(infer::gather<float>(train_.rights, idx)), ctx);
    const auto loss = objective(o.head, idx, train_);
    const double value = loss.value()[0];
    if (!std::isfinite(value))
      throw TrainingError("fine-tuning diverged: loss " + std::to_string(value) + " at step " +
                          std::to_string(step_) + " (epoch " + std::to_string(epoch_) + ")");
    loss.backward();
    opt_->step();
    epoch_sum_ += value;
    ++epoch_count_;
    ++step_;
    if (++batch_ == batches_) end_epoch();
    return value;
  }

  void run(const Log& log = {}) {
    while (!finished_) {
      const auto before = history_.epochs.size();
      step();
      if (log && history_.epochs.size() != before) {
        const auto& e = history_.epochs.back();
        std::ostringstream os;
        os << "finetune epoch " << e.epoch + 1 << " loss " << e.train_loss << " val " << e.val_metric
           << (classification_ ? " %" : " deg") << " lr " << e.lr << (e.improved ? " *" : "");
        log(os.str());
      }
    }
    restore_best();
  }

  /// Loads the parameters of the best validation epoch.
  void restore_best() {
    if (!best_.empty()) detail::restore(model_, best_);
  }

  /// Validation metric of the current parameters.
  double validate() {
    const auto out = infer::run(model_, val_, cfg_.eval.batch_size);
    if (!classification_) return mean_angular_error(val_.labels, out.angles);
    int wrong = 0;
    for (std::size_t i = 0; i < val_.size(); ++i) {
      const float* row = out.head.data() + i * static_cast<std::size_t>(cfg_.architecture.num_classes);
      const int pred =
          static_cast<int>(std::max_element(row, row + cfg_.architecture.num_classes) - row);
      wrong += pred != val_.classes[i];
    }
    return 100.0 * wrong / static_cast<double>(val_.size());
  }

  ckpt::Checkpoint model_checkpoint() {
    ckpt::Checkpoint c;
    detail::stamp(c, cfg_, "model");
    c.metadata["history"] = history_json().dump();
    c.add_module(model_, "model");
    return c;
  }

  ckpt::Checkpoint state_checkpoint() {
    ckpt::Checkpoint c;
    detail::stamp(c, cfg_, "finetune_state");
    c.add_module(model_, "model");
    opt_->save_state(c, "optimizer");
    const auto names = nn::state_tensors(model_);
    for (std::size_t i = 0; i < best_.size(); ++i) c.add("best." + names[i].name, best_[i]);
    c.metadata["lr"] = detail::exact(opt_->lr());
    c.metadata["epoch"] = std::to_string(epoch_);
    c.metadata["batch"] = std::to_string(batch_);
    c.metadata["step"] = std::to_string(step_);
    c.metadata["epoch_sum"] = detail::exact(epoch_sum_);
    c.metadata["epoch_count"] = std::to_string(epoch_count_);
    c.metadata["finished"] = finished_ ? "1" : "0";
    c.metadata["plateau"] = json{plateau_.best(), plateau_.bad_epochs()}.dump();
    c.metadata["early_stop"] = json{stopper_.best(), stopper_.bad_epochs()}.dump();
    c.metadata["history"] = history_json().dump();
    return c;
  }

  void load_state(const ckpt::Checkpoint& c) {
    if (detail::get_meta(c, "config_hash") != config::hash(cfg_))
      throw ConfigError("fine-tuning state was written under a different configuration");
    ckpt::load_module(c, model_, "model");
    opt_->load_state(c, "optimizer");
    opt_->set_lr(detail::parse_exact(detail::get_meta(c, "lr")));
    best_.clear();
    for (const auto& s : nn::state_tensors(model_))
      if (const auto* t = c.find("best." + s.name)) best_.push_back(t->as<float>());
    epoch_ = std::stoi(detail::get_meta(c, "epoch"));
    batch_ = std::stoi(detail::get_meta(c, "batch"));
    step_ = std::stoll(detail::get_meta(c, "step"));
    epoch_sum_ = detail::parse_exact(detail::get_meta(c, "epoch_sum"));
    epoch_count_ = std::stoi(detail::get_meta(c, "epoch_count"));
    finished_ = detail::get_meta(c, "finished") == "1";
    const auto p = json::parse(detail::get_meta(c, "plateau"));
    plateau_.restore(p[0].get<double>(), p[1].get<int>());
    const auto e = json::parse(detail::get_meta(c, "early_stop"));
    stopper_.restore(e[0].get<double>(), e[1].get<int>());
    const auto h = json::parse(detail::get_meta(c, "history"));
    history_.epochs.clear();
    for (const auto& r : h.at("epochs"))
      history_.epochs.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(),
                                 r.at("val_metric").get<double>(), r.at("val_loss").get<double>(),
                                 r.at("lr").get<double>(), r.at("improved").get<bool>()});
    history_.best_epoch = h.at("best_epoch").get<int>();
    history_.best_metric = h.at("best_metric").is_null() ? std::numeric_limits<double>::infinity()
                                                         : h.at("best_metric").get<double>();
    history_.early_stopped = h.at("early_stopped").get<bool>();
  }

  json history_json() const {
    json epochs = json::array();
    for (const auto& e : history_.epochs)
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_metric", e.val_metric},
                        {"val_loss", e.val_loss},
                        {"lr", e.lr},
                        {"improved", e.improved}});
    return {{"epochs", epochs},
            {"best_epoch", history_.best_epoch},
            {"best_metric", std::isfinite(history_.best_metric) ? json(history_.best_metric) : json(nullptr)},
            {"early_stopped", history_.early_stopped}};
  }

 private:
  static pmn::GazeModel<float> make_model(const config::RunConfig& cfg) {
    auto rng = make_rng(cfg.seed, {kInitModel});
    return pmn::GazeModel<float>(config::model_config(cfg), rng);
  }

  static std::vector<float> inverse_frequency(const std::vector<int>& classes, int n) {
    std::vector<double> count(static_cast<std::size_t>(n), 0.0);
    for (int c : classes) {
      if (c < 0 || c >= n)
        throw DataError("class label " + std::to_string(c) + " outside [0, " + std::to_string(n) + ")");
      count[static_cast<std::size_t>(c)] += 1;
    }
    const double present = static_cast<double>(std::count_if(count.begin(), count.end(), [](double x) { return x > 0; }));
    std::vector<float> w(static_cast<std::size_t>(n), 0.0f);
    for (std::size_t c = 0; c < count.size(); ++c)
      if (count[c] > 0) w[c] = static_cast<float>(classes.size() / (present * count[c]));
    return w;
  }

  nn::Var<float> objective(const nn::Var<float>& head, const std::vector<std::size_t>& idx,
                           const infer::Prepared& p) const {
    if (classification_) {
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(p.classes[i]);
      return nn::weighted_cross_entropy<float>(head, labels, class_weights_);
    }
    nn::Tensor<float> target({static_cast<int>(idx.size()), 2});
    const auto scale = model_.config().scale;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto n = scale.normalize(p.labels[idx[j]]);
      target[2 * j] = static_cast<float>(n.a);
      target[2 * j + 1] = static_cast<float>(n.b);
    }
    if (cfg_.ablation.use_inv_ev) return nn::sup_loss(head, target, config::ev_config(cfg_));
    return nn::mae_loss(head, target);
  }

  double validation_loss() {
    const auto out = infer::run(model_, val_, cfg_.eval.batch_size);
    std::vector<std::size_t> all(val_.size());
    std::iota(all.begin(), all.end(), 0);
    nn::NoGradGuard guard;
    if (classification_ || val_.size() >= 2) return objective(nn::constant(out.head), all, val_).value()[0];
    return 0.0;
  }

  void end_epoch() {
    EpochRecord r;
    r.epoch = epoch_;
    r.train_loss = epoch_sum_ / epoch_count_;
    r.val_metric = validate();
    r.val_loss = validation_loss();
    r.lr = opt_->lr();
    const double metric = cfg_.finetune.early_stop.metric == "val_loss" ? r.val_loss : r.val_metric;
    const bool stop = stopper_.update(metric);
    r.improved = stopper_.improved();
    if (r.improved) {
      best_ = detail::snapshot(model_);
      history_.best_epoch = epoch_;
      history_.best_metric = metric;
    }
    opt_->set_lr(plateau_.step(opt_->lr(), metric));
    history_.epochs.push_back(r);
    epoch_sum_ = 0;
    epoch_count_ = 0;
    batch_ = 0;
    ++epoch_;
    if (stop) history_.early_stopped = true;
    if (stop || epoch_ >= cfg_.finetune.epochs) finished_ = true;
  }

  config::RunConfig cfg_;
  pmn::GazeModel<float> model_;
  infer::Prepared train_, val_;
  bool classification_ = false;
  std::vector<float> class_weights_;
  std::unique_ptr<optim::Optimizer<float>> opt_;
  LrOnPlateau plateau_;
  EarlyStopping stopper_;
  std::vector<nn::Tensor<float>> best_;
  int batches_ = 0, epoch_ = 0, batch_ = 0;
  long long step_ = 0;
  double epoch_sum_ = 0;
  int epoch_count_ = 0;
  bool finished_ = false;
  FinetuneHistory history_;
};

// ---------------------------------------------------------------------------
// Leave-one-subject-out

struct FoldResult {
  std::string subject;
  bool ok = false;
  double error_deg = 0;
  int test_count = 0;
  int epochs = 0;
  std::string failure;
};

struct LosoReport {
  std::vector<FoldResult> folds;
  double mean_error_deg = std::numeric_limits<double>::quiet_NaN();
  int completed = 0;
  std::vector<std::string> warnings;
};

/// Hook that runs a single fold; the default fine-tunes and scores the
/// held-out subject.
using FoldRunner = std::function<double(const config::RunConfig&, const std::vector<const data::Sample*>& train,
                                        const std::vector<const data::Sample*>& val,
                                        const std::vector<const data::Sample*>& test, int* epochs)>;

inline FoldRunner default_fold_runner(const ckpt::Checkpoint* ssl_init, const Log& log = {}) {
  return [ssl_init, log](const config::RunConfig& cfg, const std::vector<const data::Sample*>& train,
                         const std::vector<const data::Sample*>& val, const std::vector<const data::Sample*>& test,
                         int* epochs) {
    FinetuneSession session(cfg, train, val, ssl_init);
    session.run(log);
    if (epochs) *epochs = static_cast<int>(session.history().epochs.size());
    const auto p = infer::prepare(test, cfg.architecture.face_size);
    return mean_angular_error(p.labels, infer::run(session.model(), p, cfg.eval.batch_size).angles);
  };
}

inline LosoReport run_loso(const config::RunConfig& cfg, const std::vector<data::Sample>& samples,
                           const FoldRunner& runner, const Log& log = {}) {
  const auto subjects = data::subjects_of(samples);
  const auto ids = data::subject_list(subjects);
  if (ids.size() < 2) throw DataError("leave-one-subject-out needs at least 2 subjects");
  LosoReport rep;
  double sum = 0;
  for (const auto& id : ids) {
    const auto split = data::split_loso(subjects, id, cfg.data.split.loso_val_fraction);
    const auto pick = [&](const std::vector<std::size_t>& idx) {
      std::vector<const data::Sample*> out;
      for (auto i : idx) out.push_back(&samples[i]);
      return out;
    };
    FoldResult f;
    f.subject = id;
    f.test_count = static_cast<int>(split.test.size());
    try {
      f.error_deg = runner(cfg, pick(split.train), pick(split.val), pick(split.test), &f.epochs);
      f.ok = true;
      sum += f.error_deg;
      ++rep.completed;
    } catch (const TrainingError& e) {
      f.failure = e.what();
    } catch (const DataError& e) {
      f.failure = e.what();
    }
    if (log) log("fold " + id + (f.ok ? ": " + std::to_string(f.error_deg) + " deg" : ": FAILED " + f.failure));
    rep.folds.push_back(std::move(f));
  }
  if (rep.completed > 0) rep.mean_error_deg = sum / rep.completed;
  if (rep.completed < static_cast<int>(ids.size()))
    rep.warnings.push_back("mean over " + std::to_string(rep.completed) + " of " + std::to_string(ids.size()) +
                           " folds; failed folds are excluded");
  return rep;
}

}  // namespace slyk::train
