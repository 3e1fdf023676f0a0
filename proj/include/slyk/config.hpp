#pragma once

// Run configuration: typed sections, named presets, JSON file + override
// resolution, validation and the content hash embedded in every artifact.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slyk/augmentation.hpp"
#include "slyk/data.hpp"
#include "slyk/errors.hpp"
#include "slyk/losses.hpp"
#include "slyk/networks.hpp"
#include "slyk/pmn.hpp"

namespace slyk::config {

using json = nlohmann::json;  // sorted keys: the canonical form for hashing

struct BackboneSection {
  std::string id = "toy-cnn";
  std::vector<int> channels{32, 64, 128, 256};
  int kernel = 3, stride = 2, pad = 1;
  int attention_heads = 8;
};

struct LocalSection {
  std::vector<int> channels{32, 64, 128};
  int kernel = 3, stride = 2, pad = 1;
  int attention_heads = 8;
  int out_dim = 52;
};

struct SslHeadSection {
  std::vector<int> projection{1536, 1024, 1024};
  std::vector<int> prediction{1024, 1024, 1024};
  bool batch_norm = true;
};

struct BottleneckSection {
  std::vector<int> channels{32, 64, 128};
  int kernel = 3, stride = 1, pad = 1;
  int out_dim = 512;
  std::string activation = "relu";  // relu | none
};

struct GazeHeadSection {
  std::vector<int> hidden{1024, 256};
  bool bounded = true;
  double dropout = 0.1;
};

struct ArchitectureSection {
  int face_size = 112;
  int patch_h = 36, patch_w = 60;
  BackboneSection backbone;
  LocalSection local;
  SslHeadSection ssl_heads;
  int face_feature_dim = 256;
  BottleneckSection bottleneck;
  GazeHeadSection gaze_head;
  double pitch_scale = std::numbers::pi / 2;
  double yaw_scale = std::numbers::pi;
  int num_classes = 0;  // 0 for gaze, 7 or 8 for expression datasets
};

struct AblationSection {
  bool use_pmn = true;
  bool use_ssl_init = true;
  bool use_inv_ev = true;
  bool use_mbyol_mods = true;
  bool use_local = true;
  bool use_global = true;
};

struct TransformEntry {
  std::string name;
  double p = 0.0;
  std::map<std::string, double> params;
};

struct PretrainSection {
  std::string optimizer = "sgd";
  double lr = 0.06;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 112;
  int epochs = 100;
  double tau_base = 0.996;
  std::vector<TransformEntry> augmentation;
};

struct EarlyStopSection {
  int patience = 2;
  double min_delta = 0.1;
  std::string metric = "val_angular_error";
};

struct PlateauSection {
  double factor = 0.1;
  int patience = 1;
  double min_delta = 0.0;
  double min_lr = 1e-7;
};

struct FinetuneSection {
  std::string optimizer = "adam";
  double lr = 3e-4;
  double weight_decay = 0.0;
  int batch_size = 16;
  int epochs = 50;
  bool freeze_encoder = false;
  double omega_max = 10.0;
  EarlyStopSection early_stop;
  PlateauSection lr_plateau;
};

struct SplitSection {
  std::string scheme = "random";  // random | loso
  double train = 0.8, val = 0.1, test = 0.1;
  std::string subject;
  double loso_val_fraction = 3000.0 / 42000.0;
};

struct SynthSection {
  int count = 2000;
  int subjects = 15;
  int size = 128;
  double pitch_max_deg = 25.0;
  double yaw_max_deg = 45.0;
  double dark_fraction = 0.0;
  double landmark_noise_px = 0.5;
};

struct DataSection {
  std::string root;
  double eye_margin = 0.4;
  SplitSection split;
  SynthSection synth;
};

struct EvalSection {
  std::vector<double> ranges_deg{180, 90, 20};
  std::vector<double> equivariance_thetas_deg{0, 5, 10, 15, 20, 25, 30};
  double darken_gamma = 2.5;
  double blur_sigma = 2.0;
  double illumination_threshold = 0.15;
  int plot_samples = 8;
  int batch_size = 64;
};

struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;
  bool deterministic = true;
  ArchitectureSection architecture;
  AblationSection ablation;
  PretrainSection pretrain;
  FinetuneSection finetune;
  DataSection data;
  EvalSection eval;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackboneSection, id, channels, kernel, stride, pad, attention_heads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LocalSection, channels, kernel, stride, pad, attention_heads, out_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SslHeadSection, projection, prediction, batch_norm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BottleneckSection, channels, kernel, stride, pad, out_dim, activation)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GazeHeadSection, hidden, bounded, dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ArchitectureSection, face_size, patch_h, patch_w, backbone, local, ssl_heads,
                                   face_feature_dim, bottleneck, gaze_head, pitch_scale, yaw_scale, num_classes)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AblationSection, use_pmn, use_ssl_init, use_inv_ev, use_mbyol_mods, use_local,
                                   use_global)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TransformEntry, name, p, params)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PretrainSection, optimizer, lr, momentum, weight_decay, batch_size, epochs,
                                   tau_base, augmentation)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EarlyStopSection, patience, min_delta, metric)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlateauSection, factor, patience, min_delta, min_lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FinetuneSection, optimizer, lr, weight_decay, batch_size, epochs, freeze_encoder,
                                   omega_max, early_stop, lr_plateau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SplitSection, scheme, train, val, test, subject, loso_val_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthSection, count, subjects, size, pitch_max_deg, yaw_max_deg, dark_fraction,
                                   landmark_noise_px)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataSection, root, eye_margin, split, synth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalSection, ranges_deg, equivariance_thetas_deg, darken_gamma, blur_sigma,
                                   illumination_threshold, plot_samples, batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, preset, seed, deterministic, architecture, ablation, pretrain, finetune,
                                   data, eval)

// ---------------------------------------------------------------------------
// Presets

inline std::vector<TransformEntry> default_augmentation() {
  std::vector<TransformEntry> out;
  for (const auto& t : augment::default_config(112, 112).transforms) out.push_back({t.name, t.p, t.params});
  return out;
}

/// Full-size reference settings: SGD lr 0.06 batch 112 for 100 epochs, Adam
/// lr 3e-4 batch 16, early stopping patience 2 / min_delta 0.1 degrees.
inline RunConfig reference_preset() {
  RunConfig c;
  c.preset = "reference";
  c.pretrain.augmentation = default_augmentation();
  return c;
}

/// Small toy backbone with full-width heads, for quick synthetic runs.
inline RunConfig toy_preset() {
  RunConfig c = reference_preset();
  c.preset = "toy";
  c.architecture.ssl_heads = {{512, 512, 128}, {128, 512, 128}, true};
  c.architecture.bottleneck.stride = 2;  // stride 1 at full face resolution dominates CPU cost
  c.pretrain.batch_size = 16;
  c.pretrain.epochs = 5;
  c.finetune.epochs = 20;
  c.finetune.early_stop = {5, 0.0, "val_angular_error"};
  c.finetune.lr_plateau = {0.1, 2, 0.0, 1e-7};
  return c;
}

/// Reduced resolution and widths sized so the full acceptance training
/// protocol (pretrain + 21 fine-tunes) fits in a CPU time budget.
inline RunConfig desk_preset() {
  RunConfig c = toy_preset();
  c.preset = "desk";
  auto& a = c.architecture;
  a.face_size = 64;
  a.backbone.channels = {16, 32, 64, 128};
  a.backbone.attention_heads = 4;
  a.local.channels = {16, 32, 64};
  a.local.attention_heads = 4;
  a.ssl_heads = {{256, 256, 64}, {64, 256, 64}, true};
  a.face_feature_dim = 128;
  a.bottleneck = {{16, 32, 64}, 3, 2, 1, 128, "relu"};
  a.gaze_head = {{256, 64}, true, 0.1};
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"toy", "desk", "reference"};
  return names;
}

inline RunConfig preset(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "desk") return desk_preset();
  if (name == "reference") return reference_preset();
  throw ConfigError("unknown preset '" + name + "' (known: toy, desk, reference)");
}

/// Flag settings for each named ablation variant.
inline const std::vector<std::pair<std::string, AblationSection>>& ablation_variants() {
  static const std::vector<std::pair<std::string, AblationSection>> v{
      {"full", {}},
      {"wo_mbyol", {true, true, true, false, true, true}},
      {"wo_pmn", {false, true, true, true, true, true}},
      {"wo_ssl", {true, false, true, true, true, true}},
      {"wo_inv_ev", {true, true, false, true, true, true}},
  };
  return v;
}

// ---------------------------------------------------------------------------
// Serialization and hashing

inline json to_json(const RunConfig& c) {
  json j = c;
  return j;
}

inline std::string dump(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// 16 hex digits over the compact serialization (fixed key order).
inline std::string hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void check_conv(std::vector<std::string>& v, const std::string& where, const std::vector<int>& channels,
                       int kernel, int stride, int pad) {
  if (channels.empty()) v.push_back(where + ".channels: must not be empty");
  for (int c : channels)
    if (c <= 0) v.push_back(where + ".channels: entries must be positive");
  if (kernel <= 0) v.push_back(where + ".kernel: must be positive");
  if (stride <= 0) v.push_back(where + ".stride: must be positive");
  if (pad < 0) v.push_back(where + ".pad: must be non-negative");
}

inline int conv_out(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

inline void check_resolution(std::vector<std::string>& v, const std::string& where, int h, int w,
                             const std::vector<int>& channels, int k, int s, int p) {
  if (k <= 0 || s <= 0 || p < 0) return;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h = conv_out(h, k, s, p);
    w = conv_out(w, k, s, p);
    if (h < 1 || w < 1) {
      v.push_back(where + ": input collapses below 1x1 at layer " + std::to_string(i));
      return;
    }
  }
}

inline void check_dims(std::vector<std::string>& v, const std::string& where, const std::vector<int>& dims,
                       std::size_t min_len) {
  if (dims.size() < min_len) v.push_back(where + ": needs at least " + std::to_string(min_len) + " widths");
  for (int d : dims)
    if (d <= 0) v.push_back(where + ": widths must be positive");
}

}  // namespace detail

/// Every violated constraint, in a stable order. Empty means valid.
inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> v;
  const auto& a = c.architecture;
  const auto& ab = c.ablation;
  if (a.face_size <= 0) v.push_back("architecture.face_size: must be positive");
  if (a.patch_h <= 0 || a.patch_w <= 0) v.push_back("architecture.patch_h/patch_w: must be positive");
  const auto& bb = a.backbone;
  if (!net::backbone_registry<float>().contains(bb.id))
    v.push_back("architecture.backbone.id: unknown backbone '" + bb.id + "'");
  detail::check_conv(v, "architecture.backbone", bb.channels, bb.kernel, bb.stride, bb.pad);
  detail::check_resolution(v, "architecture.backbone", a.face_size, a.face_size, bb.channels, bb.kernel, bb.stride,
                           bb.pad);
  const auto& lo = a.local;
  detail::check_conv(v, "architecture.local", lo.channels, lo.kernel, lo.stride, lo.pad);
  detail::check_resolution(v, "architecture.local", a.patch_h, a.patch_w, lo.channels, lo.kernel, lo.stride, lo.pad);
  if (lo.out_dim <= 0) v.push_back("architecture.local.out_dim: must be positive");
  const bool attention = ab.use_mbyol_mods;
  if (attention && ab.use_global && !bb.channels.empty() &&
      (bb.attention_heads <= 0 || bb.channels.back() % bb.attention_heads != 0))
    v.push_back("architecture.backbone.attention_heads: must divide the last backbone width " +
                std::to_string(bb.channels.back()));
  if (attention && ab.use_local && !lo.channels.empty() &&
      (lo.attention_heads <= 0 || lo.channels.back() % lo.attention_heads != 0))
    v.push_back("architecture.local.attention_heads: must divide the last local width " +
                std::to_string(lo.channels.back()));
  const auto& sh = a.ssl_heads;
  detail::check_dims(v, "architecture.ssl_heads.projection", sh.projection, 2);
  detail::check_dims(v, "architecture.ssl_heads.prediction", sh.prediction, 2);
  if (!sh.projection.empty() && !sh.prediction.empty() && sh.prediction.front() != sh.projection.back())
    v.push_back("architecture.ssl_heads: prediction input " + std::to_string(sh.prediction.front()) +
                " != projection output " + std::to_string(sh.projection.back()));
  if (!sh.projection.empty() && !sh.prediction.empty() && sh.prediction.back() != sh.projection.back())
    v.push_back("architecture.ssl_heads: prediction output " + std::to_string(sh.prediction.back()) +
                " != projection output " + std::to_string(sh.projection.back()) + " (the loss compares them)");
  if (a.face_feature_dim <= 0) v.push_back("architecture.face_feature_dim: must be positive");
  const auto& bn = a.bottleneck;
  detail::check_conv(v, "architecture.bottleneck", bn.channels, bn.kernel, bn.stride, bn.pad);
  detail::check_resolution(v, "architecture.bottleneck", a.patch_h, a.patch_w, bn.channels, bn.kernel, bn.stride,
                           bn.pad);
  if (bn.out_dim <= 0) v.push_back("architecture.bottleneck.out_dim: must be positive");
  if (bn.activation != "relu" && bn.activation != "none")
    v.push_back("architecture.bottleneck.activation: must be 'relu' or 'none'");
  detail::check_dims(v, "architecture.gaze_head.hidden", a.gaze_head.hidden, 1);
  if (!(a.gaze_head.dropout >= 0.0 && a.gaze_head.dropout < 1.0))
    v.push_back("architecture.gaze_head.dropout: must lie in [0, 1)");
  if (!(a.pitch_scale > 0 && a.yaw_scale > 0)) v.push_back("architecture.pitch_scale/yaw_scale: must be positive");
  if (a.num_classes != 0 && a.num_classes < 2) v.push_back("architecture.num_classes: 0 (gaze) or at least 2");
  if (!ab.use_global && !ab.use_local) v.push_back("ablation: use_global and use_local cannot both be off");
  if (!ab.use_mbyol_mods && !ab.use_global)
    v.push_back("ablation: use_mbyol_mods=false keeps only the global branch, so use_global must stay on");

  const auto& p = c.pretrain;
  if (p.optimizer != "sgd" && p.optimizer != "adam") v.push_back("pretrain.optimizer: must be 'sgd' or 'adam'");
  if (!(p.lr > 0)) v.push_back("pretrain.lr: must be positive");
  if (!(p.momentum >= 0 && p.momentum < 1)) v.push_back("pretrain.momentum: must lie in [0, 1)");
  if (!(p.weight_decay >= 0)) v.push_back("pretrain.weight_decay: must be non-negative");
  if (p.batch_size < 2) v.push_back("pretrain.batch_size: at least 2 (batch normalization)");
  if (p.epochs < 1) v.push_back("pretrain.epochs: at least 1");
  if (!(p.tau_base > 0 && p.tau_base < 1)) v.push_back("pretrain.tau_base: must lie in (0, 1)");
  try {
    augment::AugmentationConfig ac;
    for (const auto& t : p.augmentation) ac.transforms.push_back({t.name, t.p, t.params});
    ac.out_h = ac.out_w = std::max(1, a.face_size);
    augment::build_pipeline(ac);
  } catch (const ConfigError& e) {
    for (const auto& s : e.violations()) v.push_back("pretrain.augmentation: " + s);
  }

  const auto& f = c.finetune;
  if (f.optimizer != "adam" && f.optimizer != "sgd") v.push_back("finetune.optimizer: must be 'adam' or 'sgd'");
  if (!(f.lr > 0)) v.push_back("finetune.lr: must be positive");
  if (!(f.weight_decay >= 0)) v.push_back("finetune.weight_decay: must be non-negative");
  if (f.batch_size < 2) v.push_back("finetune.batch_size: at least 2 (batch normalization)");
  if (f.epochs < 1) v.push_back("finetune.epochs: at least 1");
  if (!(f.omega_max > 0)) v.push_back("finetune.omega_max: must be positive");
  if (f.early_stop.patience < 1) v.push_back("finetune.early_stop.patience: at least 1");
  if (!(f.early_stop.min_delta >= 0)) v.push_back("finetune.early_stop.min_delta: must be non-negative");
  if (f.early_stop.metric != "val_angular_error" && f.early_stop.metric != "val_loss")
    v.push_back("finetune.early_stop.metric: must be 'val_angular_error' or 'val_loss'");
  if (!(f.lr_plateau.factor > 0 && f.lr_plateau.factor < 1)) v.push_back("finetune.lr_plateau.factor: must lie in (0, 1)");
  if (f.lr_plateau.patience < 1) v.push_back("finetune.lr_plateau.patience: at least 1");
  if (!(f.lr_plateau.min_delta >= 0)) v.push_back("finetune.lr_plateau.min_delta: must be non-negative");
  if (!(f.lr_plateau.min_lr >= 0)) v.push_back("finetune.lr_plateau.min_lr: must be non-negative");

  const auto& d = c.data;
  if (!(d.eye_margin >= 0)) v.push_back("data.eye_margin: must be non-negative");
  const auto& s = d.split;
  if (s.scheme != "random" && s.scheme != "loso") v.push_back("data.split.scheme: must be 'random' or 'loso'");
  if (!(s.train >= 0 && s.val >= 0 && s.test >= 0 && std::abs(s.train + s.val + s.test - 1.0) < 1e-9))
    v.push_back("data.split: train/val/test fractions must be non-negative and sum to 1");
  if (s.scheme == "random" && (s.train <= 0 || s.val <= 0))
    v.push_back("data.split: training and validation fractions must be positive");
  if (!(s.loso_val_fraction > 0 && s.loso_val_fraction < 1))
    v.push_back("data.split.loso_val_fraction: must lie in (0, 1)");
  const auto& sy = d.synth;
  if (sy.count < 1) v.push_back("data.synth.count: at least 1");
  if (sy.subjects < 1) v.push_back("data.synth.subjects: at least 1");
  if (sy.size < 32) v.push_back("data.synth.size: at least 32");
  if (!(sy.pitch_max_deg > 0 && sy.pitch_max_deg < 60)) v.push_back("data.synth.pitch_max_deg: must lie in (0, 60)");
  if (!(sy.yaw_max_deg > 0 && sy.yaw_max_deg < 80)) v.push_back("data.synth.yaw_max_deg: must lie in (0, 80)");
  if (!(sy.dark_fraction >= 0 && sy.dark_fraction <= 1)) v.push_back("data.synth.dark_fraction: must lie in [0, 1]");
  if (!(sy.landmark_noise_px >= 0)) v.push_back("data.synth.landmark_noise_px: must be non-negative");

  const auto& e = c.eval;
  if (e.ranges_deg.empty()) v.push_back("eval.ranges_deg: must not be empty");
  for (double r : e.ranges_deg)
    if (!(r > 0 && r <= 180)) v.push_back("eval.ranges_deg: entries must lie in (0, 180]");
  for (double t : e.equivariance_thetas_deg)
    if (!std::isfinite(t)) v.push_back("eval.equivariance_thetas_deg: entries must be finite");
  if (!(e.darken_gamma > 0)) v.push_back("eval.darken_gamma: must be positive");
  if (!(e.blur_sigma >= 0)) v.push_back("eval.blur_sigma: must be non-negative");
  if (e.plot_samples < 0) v.push_back("eval.plot_samples: must be non-negative");
  if (e.batch_size < 1) v.push_back("eval.batch_size: at least 1");
  return v;
}

// ---------------------------------------------------------------------------
// Resolution: preset <- file <- --set overrides <- environment

namespace detail {

inline const char* kind(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

/// Checks that `value` may replace `base`: same kind, integral where the
/// base is integral.
inline void check_kind(std::vector<std::string>& v, const std::string& path, const json& base, const json& value) {
  if (base.is_number() && value.is_number()) {
    if ((base.is_number_integer() || base.is_number_unsigned()) && value.is_number_float() &&
        value.get<double>() != std::floor(value.get<double>()))
      v.push_back(path + ": expected an integer, got " + value.dump());
    else if (base.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0)
      v.push_back(path + ": expected a non-negative integer, got " + value.dump());
    return;
  }
  if (std::string(kind(base)) != kind(value))
    v.push_back(path + ": expected " + std::string(kind(base)) + ", got " + kind(value));
}

inline void check_keys(std::vector<std::string>& v, const std::string& path, const json& base, const json& over) {
  if (!over.is_object()) {
    check_kind(v, path.empty() ? "<root>" : path, base, over);
    return;
  }
  if (!base.is_object()) {
    v.push_back((path.empty() ? "<root>" : path) + ": expected " + kind(base) + ", got object");
    return;
  }
  for (const auto& [k, val] : over.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) {
      v.push_back(p + ": unknown key");
      continue;
    }
    check_keys(v, p, base.at(k), val);
  }
}

/// Integral-valued floats become integers where the base holds one, so the
/// typed conversion never truncates silently.
inline void normalize_numbers(const json& base, json& value) {
  if (value.is_object() && base.is_object()) {
    for (auto& [k, val] : value.items())
      if (base.contains(k)) normalize_numbers(base.at(k), val);
  } else if (base.is_number_unsigned() && value.is_number()) {
    value = static_cast<std::uint64_t>(value.get<double>());
  } else if (base.is_number_integer() && value.is_number_float()) {
    value = static_cast<long long>(value.get<double>());
  }
}

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;  // bare words are strings
  }
}

}  // namespace detail

struct ResolveOptions {
  std::optional<std::string> preset;          // overrides the file's "preset"
  std::optional<std::filesystem::path> file;  // JSON config file
  std::vector<std::string> sets;              // "a.b.c=value"
  bool use_env = true;                        // SLYK_SEED, SLYK_DETERMINISTIC
};

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline RunConfig resolve(const ResolveOptions& opt) {
  std::vector<std::string> v;
  json file = json::object();
  if (opt.file) {
    file = read_json_file(*opt.file);
    if (!file.is_object()) throw ConfigError(opt.file->string() + ": top level must be an object");
  }
  std::string preset_name = "toy";
  if (file.contains("preset") && file["preset"].is_string()) preset_name = file["preset"].get<std::string>();
  if (opt.preset) preset_name = *opt.preset;
  json merged = to_json(preset(preset_name));
  const json base = merged;

  detail::check_keys(v, "", base, file);
  if (!v.empty()) throw ConfigError(v);
  detail::normalize_numbers(base, file);
  merged.merge_patch(file);

  for (const auto& s : opt.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      v.push_back("--set '" + s + "': expected key.path=value");
      continue;
    }
    const std::string key = s.substr(0, eq);
    json value = detail::parse_override_value(s.substr(eq + 1));
    json::json_pointer ptr;
    bool ok = true;
    {
      std::string part;
      std::istringstream is(key);
      const json* node = &base;
      while (std::getline(is, part, '.')) {
        if (!node->is_object() || !node->contains(part)) {
          ok = false;
          break;
        }
        node = &node->at(part);
        ptr /= part;
      }
      if (!ok) {
        v.push_back(key + ": unknown key");
        continue;
      }
      // A quoted number typed on the command line for a string field.
      if (node->is_string() && !value.is_string()) value = s.substr(eq + 1);
      detail::check_kind(v, key, *node, value);
      detail::normalize_numbers(*node, value);
    }
    merged[ptr] = value;
  }
  if (opt.use_env) {
    if (const char* seed = std::getenv("SLYK_SEED")) {
      char* end = nullptr;
      const unsigned long long n = std::strtoull(seed, &end, 10);
      if (end == seed || *end != '\0')
        v.push_back(std::string("SLYK_SEED: not an unsigned integer: '") + seed + "'");
      else
        merged["seed"] = static_cast<std::uint64_t>(n);
    }
    if (const char* det = std::getenv("SLYK_DETERMINISTIC")) {
      const std::string d = det;
      if (d == "1" || d == "true")
        merged["deterministic"] = true;
      else if (d == "0" || d == "false")
        merged["deterministic"] = false;
      else
        v.push_back("SLYK_DETERMINISTIC: expected 0 or 1, got '" + d + "'");
    }
  }
  if (!v.empty()) throw ConfigError(v);
  merged["preset"] = preset_name;
  RunConfig out;
  try {
    out = merged.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config conversion failed: ") + e.what());
  }
  auto problems = validate(out);
  if (!problems.empty()) throw ConfigError(problems);
  return out;
}

/// Applies the flags of a named ablation variant.
inline RunConfig with_ablation(RunConfig c, const std::string& variant) {
  for (const auto& [name, flags] : ablation_variants())
    if (name == variant) {
      c.ablation = flags;
      return c;
    }
  throw ConfigError("unknown ablation variant '" + variant + "'");
}

// ---------------------------------------------------------------------------
// Module configurations derived from a RunConfig

/// The encoder after ablation flags. Without the mBYOL modifications only the
/// attention-free global branch remains.
inline net::EncoderConfig encoder_config(const RunConfig& c) {
  const auto& a = c.architecture;
  net::EncoderConfig e;
  e.backbone.id = a.backbone.id;
  e.backbone.convs = {a.backbone.channels, a.backbone.kernel, a.backbone.stride, a.backbone.pad};
  e.face_h = e.face_w = a.face_size;
  e.global_heads = a.backbone.attention_heads;
  e.local.convs = {a.local.channels, a.local.kernel, a.local.stride, a.local.pad};
  e.local.heads = a.local.attention_heads;
  e.local.out_dim = a.local.out_dim;
  e.local.patch_h = a.patch_h;
  e.local.patch_w = a.patch_w;
  e.use_global = c.ablation.use_global;
  e.use_local = c.ablation.use_local;
  e.use_attention = c.ablation.use_mbyol_mods;
  if (!c.ablation.use_mbyol_mods) {
    e.use_global = true;
    e.use_local = false;
  }
  return e;
}

inline net::PairConfig pair_config(const RunConfig& c) {
  net::PairConfig p;
  p.encoder = encoder_config(c);
  p.heads.projection = c.architecture.ssl_heads.projection;
  p.heads.prediction = c.architecture.ssl_heads.prediction;
  p.heads.batch_norm = c.architecture.ssl_heads.batch_norm;
  return p;
}

inline pmn::ModelConfig model_config(const RunConfig& c) {
  const auto& a = c.architecture;
  pmn::ModelConfig m;
  m.encoder = encoder_config(c);
  m.face_feature_dim = a.face_feature_dim;
  m.bottleneck = {a.bottleneck.channels, a.bottleneck.kernel, a.bottleneck.stride, a.bottleneck.pad,
                  a.bottleneck.out_dim, a.bottleneck.activation == "relu"};
  m.head = {a.gaze_head.hidden, a.gaze_head.bounded, a.gaze_head.dropout};
  m.use_pmn = c.ablation.use_pmn;
  m.freeze_encoder = c.finetune.freeze_encoder;
  m.num_classes = a.num_classes;
  m.scale = {a.pitch_scale, a.yaw_scale};
  return m;
}

/// Face-view augmentation. Without the mBYOL modifications only the
/// transforms of the original BYOL recipe are kept.
inline augment::AugmentationConfig augmentation_config(const RunConfig& c) {
  augment::AugmentationConfig a;
  for (const auto& t : c.pretrain.augmentation) a.transforms.push_back({t.name, t.p, t.params});
  a.out_h = a.out_w = c.architecture.face_size;
  a.seed = c.seed;
  return c.ablation.use_mbyol_mods ? a : augment::byol_subset(a);
}

inline augment::AugmentationConfig patch_augmentation_config(const RunConfig& c) {
  return augment::photometric_subset(augmentation_config(c), c.architecture.patch_h, c.architecture.patch_w);
}

inline losses::SslTerms ssl_terms(const RunConfig& c) {
  return c.ablation.use_mbyol_mods ? losses::SslTerms::kFour : losses::SslTerms::kTwo;
}

inline losses::EvConfig ev_config(const RunConfig& c) {
  losses::EvConfig e;
  e.omega_max = c.finetune.omega_max;
  return e;
}

/// Whether any enabled component reads the eye patches.
inline bool needs_patches(const RunConfig& c) {
  return c.ablation.use_pmn || (c.ablation.use_local && c.ablation.use_mbyol_mods);
}

inline data::PatchOptions patch_options(const RunConfig& c) {
  data::PatchOptions o;
  o.height = c.architecture.patch_h;
  o.width = c.architecture.patch_w;
  o.margin = c.data.eye_margin;
  o.require_landmarks = needs_patches(c);
  return o;
}

inline data::SynthConfig synth_config(const RunConfig& c) {
  const auto& s = c.data.synth;
  return {s.count, c.seed, s.subjects, s.size, s.pitch_max_deg, s.yaw_max_deg, s.dark_fraction, s.landmark_noise_px};
}

/// Conflicts between the configuration and a concrete dataset.
inline std::vector<std::string> validate_for_dataset(const RunConfig& c, const data::DatasetManifest& m) {
  std::vector<std::string> v;
  std::size_t missing = 0;
  for (const auto& r : m.records) missing += !r.landmarks;
  if (needs_patches(c) && missing > 0) {
    const std::string what = missing == m.records.size() ? "the dataset has no eye landmarks"
                                                          : std::to_string(missing) + " of " +
                                                                std::to_string(m.records.size()) +
                                                                " images have no eye landmarks";
    if (c.ablation.use_pmn) v.push_back("ablation.use_pmn: needs eye patches but " + what);
    if (c.ablation.use_local && c.ablation.use_mbyol_mods)
      v.push_back("ablation.use_local: needs eye patches but " + what);
  }
  const bool classes = m.task == data::Task::kExpression;
  if (classes && c.architecture.num_classes < 2)
    v.push_back("architecture.num_classes: the dataset has class labels, set num_classes to the class count");
  if (!classes && c.architecture.num_classes != 0)
    v.push_back("architecture.num_classes: the dataset is a gaze dataset, num_classes must be 0");
  if (classes)
    for (const auto& r : m.records)
      if (r.class_id >= c.architecture.num_classes) {
        v.push_back("architecture.num_classes: class " + std::to_string(r.class_id) + " in " + r.file +
                    " exceeds the configured count");
        break;
      }
  return v;
}

}  // namespace slyk::config
