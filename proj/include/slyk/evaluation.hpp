#pragma once

// Angular-error evaluation with yaw-range slices, the rotational
// equivariance sweep, appearance corruptions, low-illumination subsetting
// and the ablation comparison table.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slyk/data.hpp"
#include "slyk/inference.hpp"

namespace slyk::eval {

using geometry::GazeAngles;
using infer::ModelInput;
using infer::Predictor;
using json = nlohmann::ordered_json;

struct SliceResult {
  double range_deg = 0;  // |label yaw| <= range
  int count = 0;
  std::optional<double> mean_error_deg;  // empty when count == 0
};

struct SampleError {
  std::string file;
  std::string subject;
  GazeAngles label, pred;
  double error_deg = 0;
};

struct EvalReport {
  std::string config_hash;
  int count = 0;
  double mean_error_deg = 0;
  std::vector<SliceResult> slices;
  std::vector<SampleError> samples;
};

inline std::vector<ModelInput> inputs_of(const std::vector<const data::Sample*>& samples) {
  std::vector<ModelInput> in;
  in.reserve(samples.size());
  for (const auto* s : samples) in.push_back({s->face, s->left_patch, s->right_patch});
  return in;
}

/// Scores predictions against labels: per-sample errors and yaw slices.
inline EvalReport score(const std::vector<const data::Sample*>& samples, const std::vector<GazeAngles>& labels,
                        const std::vector<GazeAngles>& preds, const std::vector<double>& ranges_deg,
                        const std::string& config_hash) {
  SLYK_EXPECT(labels.size() == preds.size() && labels.size() == samples.size(),
              "score: " << samples.size() << " samples, " << labels.size() << " labels, " << preds.size()
                        << " predictions");
  EvalReport r;
  r.config_hash = config_hash;
  r.count = static_cast<int>(labels.size());
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double e = geometry::angular_error(labels[i], preds[i]);
    r.samples.push_back({samples[i]->file, samples[i]->subject, labels[i], preds[i], e});
    total += e;
  }
  r.mean_error_deg = r.count > 0 ? total / r.count : 0.0;
  for (double range : ranges_deg) {
    SliceResult s;
    s.range_deg = range;
    double sum = 0;
    for (const auto& e : r.samples)
      if (std::abs(geometry::rad2deg(e.label.yaw)) <= range) {
        ++s.count;
        sum += e.error_deg;
      }
    if (s.count > 0) s.mean_error_deg = sum / s.count;
    r.slices.push_back(s);
  }
  return r;
}

inline EvalReport evaluate(const Predictor& predict, const std::vector<const data::Sample*>& samples,
                           const std::vector<double>& ranges_deg, const std::string& config_hash) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  std::vector<GazeAngles> labels;
  for (const auto* s : samples) labels.push_back(s->label);
  return score(samples, labels, predict(inputs_of(samples)), ranges_deg, config_hash);
}

// ---------------------------------------------------------------------------
// Rotational equivariance

struct EquivariancePoint {
  double theta_deg = 0;
  double mean_error_deg = 0;
  int count = 0;
  int excluded = 0;  // rotated eye landmarks left the frame
};

struct EquivarianceCurve {
  std::string config_hash;
  std::vector<EquivariancePoint> points;  // ascending theta
};

/// The label rotation paired with the image rotation below.
inline GazeAngles rotate_label(const GazeAngles& g, double theta_deg) {
  return geometry::rotate2d(geometry::GazeVector2::from(g), geometry::deg2rad(theta_deg)).as_angles();
}

/// Clockwise on screen by theta, matching rotate_label: OpenCV's angle is
/// counter-clockwise, hence the sign flip.
inline cv::Mat rotate_image(const cv::Mat& img, double theta_deg) { return image::rotate(img, -theta_deg); }

inline bool landmarks_inside(const data::Sample& s, double theta_deg) {
  if (!s.landmarks) return true;
  const auto& lm = *s.landmarks;
  for (const auto* eye : {&lm.left, &lm.right})
    for (const auto& p : *eye) {
      const auto q = image::rotate_point(p, s.face.rows, s.face.cols, -theta_deg);
      if (q.x < 0 || q.y < 0 || q.x > s.face.cols - 1 || q.y > s.face.rows - 1) return false;
    }
  return true;
}

inline EquivarianceCurve equivariance_sweep(const Predictor& predict, const std::vector<const data::Sample*>& samples,
                                            std::vector<double> thetas_deg, const std::vector<double>& ranges_deg,
                                            const std::string& config_hash) {
  if (samples.empty()) throw DataError("equivariance_sweep: no samples");
  for (double t : thetas_deg)
    if (!std::isfinite(t)) throw DomainError("equivariance_sweep: non-finite rotation angle");
  std::sort(thetas_deg.begin(), thetas_deg.end());
  EquivarianceCurve curve;
  curve.config_hash = config_hash;
  for (double theta : thetas_deg) {
    EquivariancePoint pt;
    pt.theta_deg = theta;
    if (theta == 0.0) {
      const auto r = evaluate(predict, samples, ranges_deg, config_hash);
      pt.mean_error_deg = r.mean_error_deg;
      pt.count = r.count;
      curve.points.push_back(pt);
      continue;
    }
    std::vector<const data::Sample*> kept;
    std::vector<ModelInput> inputs;
    std::vector<GazeAngles> labels;
    for (const auto* s : samples) {
      if (!landmarks_inside(*s, theta)) {
        ++pt.excluded;
        continue;
      }
      kept.push_back(s);
      inputs.push_back({rotate_image(s->face, theta), rotate_image(s->left_patch, theta),
                        rotate_image(s->right_patch, theta)});
      labels.push_back(rotate_label(s->label, theta));
    }
    if (!kept.empty()) {
      const auto r = score(kept, labels, predict(inputs), ranges_deg, config_hash);
      pt.mean_error_deg = r.mean_error_deg;
      pt.count = r.count;
    } else {
      pt.mean_error_deg = std::numeric_limits<double>::quiet_NaN();
    }
    curve.points.push_back(pt);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Appearance corruptions

struct Corruption {
  enum class Kind { kDarken, kBlur } kind = Kind::kDarken;
  double value = 1.0;  // gamma for darken, sigma (pixels) for blur

  bool identity() const { return kind == Kind::kDarken ? value == 1.0 : value == 0.0; }
  std::string name() const {
    std::ostringstream os;
    os << (kind == Kind::kDarken ? "darken(gamma=" : "blur(sigma=") << value << ")";
    return os.str();
  }
};

/// darken: I -> I^gamma; blur: Gaussian with standard deviation sigma.
inline cv::Mat apply_corruption(const cv::Mat& img, const Corruption& c) {
  image::expect_rgb(img, "apply_corruption");
  if (c.identity()) return img;
  cv::Mat out;
  if (c.kind == Corruption::Kind::kDarken) {
    SLYK_EXPECT(c.value > 0, "darken: gamma must be positive, got " << c.value);
    cv::pow(img, c.value, out);
  } else {
    SLYK_EXPECT(c.value > 0, "blur: sigma must be non-negative, got " << c.value);
    cv::GaussianBlur(img, out, cv::Size(0, 0), c.value, c.value, cv::BORDER_REFLECT_101);
  }
  return out;
}

struct CorruptionReport {
  std::string corruption;
  EvalReport clean, corrupted;
};

inline CorruptionReport corruption_eval(const Predictor& predict, const std::vector<const data::Sample*>& samples,
                                        const Corruption& c, const std::vector<double>& ranges_deg,
                                        const std::string& config_hash) {
  CorruptionReport r;
  r.corruption = c.name();
  r.clean = evaluate(predict, samples, ranges_deg, config_hash);
  if (c.identity()) {
    r.corrupted = r.clean;
    return r;
  }
  std::vector<ModelInput> in;
  std::vector<GazeAngles> labels;
  for (const auto* s : samples) {
    in.push_back({apply_corruption(s->face, c), apply_corruption(s->left_patch, c), apply_corruption(s->right_patch, c)});
    labels.push_back(s->label);
  }
  r.corrupted = score(samples, labels, predict(in), ranges_deg, config_hash);
  return r;
}

/// Samples whose illumination score is below `threshold`.
inline std::vector<const data::Sample*> low_illumination(const std::vector<const data::Sample*>& samples,
                                                         double threshold) {
  std::vector<const data::Sample*> out;
  for (const auto* s : samples)
    if (s->illumination < threshold) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation comparison

struct AblationRow {
  std::string variant;
  std::vector<std::optional<double>> errors;  // one per column
  double mean_increase_pct = 0;               // vs the reference row
};

struct AblationTable {
  std::vector<std::string> columns;  // "<dataset> <range>"
  std::vector<AblationRow> rows;     // reference first
};

struct VariantReports {
  std::string variant;
  std::vector<std::pair<std::string, EvalReport>> datasets;  // (dataset name, report)
};

/// Per-variant errors and the mean over columns of 100 (L - L_ref) / L_ref.
/// Columns where either error is undefined are left out of the mean.
inline AblationTable ablation_report(const std::vector<VariantReports>& variants) {
  SLYK_EXPECT(!variants.empty(), "ablation_report: no variants");
  const auto& ref = variants.front();
  AblationTable t;
  for (const auto& [name, rep] : ref.datasets)
    for (const auto& s : rep.slices) {
      std::ostringstream os;
      os << name << " +-" << s.range_deg;
      t.columns.push_back(os.str());
    }
  for (const auto& v : variants) {
    if (v.datasets.size() != ref.datasets.size())
      throw ContractError("ablation_report: variant '" + v.variant + "' covers a different set of datasets");
    AblationRow row;
    row.variant = v.variant;
    double sum = 0;
    int n = 0;
    for (std::size_t d = 0; d < v.datasets.size(); ++d) {
      const auto& [name, rep] = v.datasets[d];
      const auto& rrep = ref.datasets[d].second;
      if (name != ref.datasets[d].first || rep.slices.size() != rrep.slices.size())
        throw ContractError("ablation_report: variant '" + v.variant + "' has a different slice structure for '" +
                            name + "'");
      for (std::size_t s = 0; s < rep.slices.size(); ++s) {
        if (rep.slices[s].range_deg != rrep.slices[s].range_deg)
          throw ContractError("ablation_report: slice ranges differ for '" + name + "'");
        row.errors.push_back(rep.slices[s].mean_error_deg);
        const auto& l = rep.slices[s].mean_error_deg;
        const auto& lr = rrep.slices[s].mean_error_deg;
        if (l && lr && *lr > 0) {
          sum += 100.0 * (*l - *lr) / *lr;
          ++n;
        }
      }
    }
    row.mean_increase_pct = n > 0 ? sum / n : 0.0;
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Serialization

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline json finite_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const EvalReport& r, bool per_sample = true) {
  json slices = json::array();
  for (const auto& s : r.slices)
    slices.push_back({{"range_deg", s.range_deg}, {"count", s.count}, {"mean_error_deg", opt_json(s.mean_error_deg)}});
  json j{{"config_hash", r.config_hash}, {"count", r.count}, {"mean_error_deg", r.mean_error_deg}, {"slices", slices}};
  if (per_sample) {
    json rows = json::array();
    for (const auto& e : r.samples)
      rows.push_back({{"file", e.file},
                      {"subject", e.subject},
                      {"label_pitch_deg", geometry::rad2deg(e.label.pitch)},
                      {"label_yaw_deg", geometry::rad2deg(e.label.yaw)},
                      {"pred_pitch_deg", geometry::rad2deg(e.pred.pitch)},
                      {"pred_yaw_deg", geometry::rad2deg(e.pred.yaw)},
                      {"error_deg", e.error_deg}});
    j["samples"] = rows;
  }
  return j;
}

inline json to_json(const EquivarianceCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points)
    pts.push_back({{"theta_deg", p.theta_deg},
                   {"mean_error_deg", finite_json(p.mean_error_deg)},
                   {"count", p.count},
                   {"excluded", p.excluded}});
  return {{"config_hash", c.config_hash}, {"points", pts}};
}

inline json to_json(const CorruptionReport& r) {
  return {{"corruption", r.corruption}, {"clean", to_json(r.clean)}, {"corrupted", to_json(r.corrupted)}};
}

inline json to_json(const AblationTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json errs = json::array();
    for (const auto& e : r.errors) errs.push_back(opt_json(e));
    rows.push_back({{"variant", r.variant}, {"errors_deg", errs}, {"mean_increase_pct", r.mean_increase_pct}});
  }
  return {{"columns", t.columns}, {"rows", rows}};
}

inline std::string fmt(const std::optional<double>& v, int precision = 2) {
  if (!v || !std::isfinite(*v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline std::string table(const EvalReport& r) {
  std::ostringstream os;
  os << "config " << r.config_hash << "\n";
  os << "samples " << r.count << "  mean angular error " << fmt(r.mean_error_deg) << " deg\n";
  os << std::left << std::setw(12) << "yaw range" << std::setw(8) << "count" << "error (deg)\n";
  for (const auto& s : r.slices) {
    std::ostringstream range;
    range << "+-" << s.range_deg;
    os << std::left << std::setw(12) << range.str() << std::setw(8) << s.count << fmt(s.mean_error_deg) << "\n";
  }
  return os.str();
}

inline std::string table(const EquivarianceCurve& c) {
  std::ostringstream os;
  os << "config " << c.config_hash << "\n" << std::left << std::setw(10) << "theta" << std::setw(14) << "error (deg)"
     << std::setw(8) << "count" << "excluded\n";
  for (const auto& p : c.points)
    os << std::left << std::setw(10) << p.theta_deg << std::setw(14) << fmt(p.mean_error_deg) << std::setw(8)
       << p.count << p.excluded << "\n";
  return os.str();
}

inline std::string table(const CorruptionReport& r) {
  std::ostringstream os;
  os << "corruption " << r.corruption << "\n";
  os << std::left << std::setw(12) << "yaw range" << std::setw(10) << "clean" << "corrupted\n";
  for (std::size_t i = 0; i < r.clean.slices.size(); ++i) {
    std::ostringstream range;
    range << "+-" << r.clean.slices[i].range_deg;
    os << std::left << std::setw(12) << range.str() << std::setw(10) << fmt(r.clean.slices[i].mean_error_deg)
       << fmt(r.corrupted.slices[i].mean_error_deg) << "\n";
  }
  os << std::left << std::setw(12) << "all" << std::setw(10) << fmt(r.clean.mean_error_deg)
     << fmt(r.corrupted.mean_error_deg) << "\n";
  return os.str();
}

inline std::string table(const AblationTable& t) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "variant";
  for (const auto& c : t.columns) os << std::setw(16) << c;
  os << "mean increase %\n";
  for (const auto& r : t.rows) {
    os << std::left << std::setw(12) << r.variant;
    for (const auto& e : r.errors) os << std::setw(16) << fmt(e);
    os << fmt(r.mean_increase_pct) << "\n";
  }
  return os.str();
}

}  // namespace slyk::eval
