#pragma once

// Samples, the on-disk dataset layout, eye-patch extraction, the synthetic
// face generator and train/val/test splits.
//
// Layout:
//   root/images/<file>.png
//   root/labels.csv     file,subject,pitch,yaw,unit   (unit: deg | rad)
//                       file,subject,class            (expression datasets)
//   root/landmarks.csv  file,lx0,ly0,lx1,ly1,rx0,ry0,rx1,ry1   (optional)

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slyk/geometry.hpp"
#include "slyk/image.hpp"
#include "slyk/rng.hpp"

namespace slyk::data {

namespace fs = std::filesystem;
using geometry::GazeAngles;

/// Two corner points per eye. "left" is the eye on the image's left side.
struct EyeCorners {
  std::array<cv::Point2d, 2> left;
  std::array<cv::Point2d, 2> right;
};

enum class Task { kGaze, kExpression };

struct Record {
  std::string file;
  std::string subject;
  GazeAngles label;
  int class_id = -1;
  std::optional<EyeCorners> landmarks;
};

struct DatasetManifest {
  fs::path root;
  Task task = Task::kGaze;
  std::vector<Record> records;
};

struct Sample {
  std::string file;
  cv::Mat face;  // full source image
  cv::Mat left_patch, right_patch;
  GazeAngles label;
  int class_id = -1;
  std::string subject;
  std::optional<EyeCorners> landmarks;
  double illumination = 0.0;  // mean luma of the face
};

struct Exclusion {
  std::string file;
  std::string reason;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;
  std::vector<Exclusion> excluded;
};

struct PatchOptions {
  int height = 36;
  int width = 60;
  double margin = 0.4;  // fraction of the corner span added on each side
  // When false, samples without landmarks get flat grey patches instead of
  // being excluded (for models that never read the patches).
  bool require_landmarks = true;
};

// ---------------------------------------------------------------------------
// Eye patches

/// Crop rectangle (centre, width, height) for one eye.
struct EyeBox {
  cv::Point2d centre;
  double width = 0, height = 0;

  cv::Rect2d rect() const { return {centre.x - width / 2, centre.y - height / 2, width, height}; }
};

inline EyeBox eye_box(const std::array<cv::Point2d, 2>& corners, const PatchOptions& opt) {
  const double span = cv::norm(corners[1] - corners[0]);
  if (!(span > 1e-9)) throw DataError("eye landmarks are degenerate (zero corner span)");
  EyeBox b;
  b.centre = (corners[0] + corners[1]) * 0.5;
  b.width = span * (1.0 + 2.0 * opt.margin);
  b.height = b.width * opt.height / opt.width;
  return b;
}

inline cv::Mat crop_box(const cv::Mat& img, const EyeBox& b, int out_h, int out_w) {
  // Affine map from output pixel centres onto the box (pixel-centre
  // coordinates), sampled bilinearly.
  const double sx = b.width / out_w, sy = b.height / out_h;
  const double x0 = b.centre.x - b.width / 2 + sx / 2;
  const double y0 = b.centre.y - b.height / 2 + sy / 2;
  cv::Mat m = (cv::Mat_<double>(2, 3) << sx, 0, x0, 0, sy, y0);
  cv::Mat out;
  cv::warpAffine(img, out, m, cv::Size(out_w, out_h), cv::INTER_LINEAR | cv::WARP_INVERSE_MAP, cv::BORDER_REPLICATE);
  return out;
}

/// Sorts the two eyes so that `left` is the one further left in the image.
inline EyeCorners canonical(EyeCorners c) {
  const double lx = (c.left[0].x + c.left[1].x) / 2, rx = (c.right[0].x + c.right[1].x) / 2;
  if (lx > rx) std::swap(c.left, c.right);
  return c;
}

inline std::pair<cv::Mat, cv::Mat> extract_eye_patches(const cv::Mat& face, const EyeCorners& landmarks,
                                                       const PatchOptions& opt = {}) {
  image::expect_rgb(face, "extract_eye_patches");
  const auto c = canonical(landmarks);
  for (const auto* eye : {&c.left, &c.right})
    for (const auto& p : *eye)
      if (!(p.x >= 0 && p.y >= 0 && p.x <= face.cols - 1 && p.y <= face.rows - 1))
        throw DataError("eye landmark outside the image");
  return {crop_box(face, eye_box(c.left, opt), opt.height, opt.width),
          crop_box(face, eye_box(c.right, opt), opt.height, opt.width)};
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

inline Table read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  Table t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (t.header.empty()) {
      t.header = split_line(line);
    } else {
      t.rows.push_back(split_line(line));
      t.line_numbers.push_back(line_no);
    }
  }
  if (t.header.empty()) throw DataError(path.string() + ": missing header row");
  return t;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    // from_chars rejects "nan"/"inf" spellings on some inputs; fall back.
    std::istringstream is(s);
    is >> v;
    if (!is || !is.eof()) return std::nullopt;
  }
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Loading

inline DatasetManifest load_dataset(const fs::path& root) {
  std::vector<std::string> problems;
  DatasetManifest m;
  m.root = root;
  if (!fs::is_directory(root)) throw DataError(root.string() + ": not a directory");
  const auto labels_path = root / "labels.csv";
  if (!fs::exists(labels_path)) throw DataError(labels_path.string() + ": missing");
  const auto table = csv::read(labels_path);
  const int c_file = table.column("file"), c_subject = table.column("subject");
  const int c_pitch = table.column("pitch"), c_yaw = table.column("yaw"), c_unit = table.column("unit");
  const int c_class = table.column("class");
  if (c_file < 0) problems.push_back("labels.csv: missing column 'file'");
  if (c_subject < 0) problems.push_back("labels.csv: missing column 'subject'");
  if (c_class >= 0) {
    m.task = Task::kExpression;
  } else if (c_pitch < 0 || c_yaw < 0 || c_unit < 0) {
    problems.push_back("labels.csv: need columns pitch, yaw, unit (gaze) or class (expression)");
  }
  if (!problems.empty()) throw DataError(problems);

  std::set<std::string> seen;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = "labels.csv line " + std::to_string(table.line_numbers[i]);
    if (row.size() != table.header.size()) {
      problems.push_back(where + ": expected " + std::to_string(table.header.size()) + " fields, got " +
                         std::to_string(row.size()));
      continue;
    }
    Record r;
    r.file = row[static_cast<std::size_t>(c_file)];
    r.subject = row[static_cast<std::size_t>(c_subject)];
    if (r.file.empty()) problems.push_back(where + ": empty file name");
    if (r.subject.empty()) problems.push_back(where + ": empty subject");
    if (!seen.insert(r.file).second) problems.push_back(where + ": duplicate file '" + r.file + "'");
    if (!r.file.empty() && !fs::exists(root / "images" / r.file))
      problems.push_back(where + ": image images/" + r.file + " not found");
    if (m.task == Task::kExpression) {
      const auto v = csv::parse_double(row[static_cast<std::size_t>(c_class)]);
      if (!v || *v < 0 || *v != std::floor(*v)) {
        problems.push_back(where + ": class must be a non-negative integer");
        continue;
      }
      r.class_id = static_cast<int>(*v);
    } else {
      const auto p = csv::parse_double(row[static_cast<std::size_t>(c_pitch)]);
      const auto y = csv::parse_double(row[static_cast<std::size_t>(c_yaw)]);
      const auto& unit = row[static_cast<std::size_t>(c_unit)];
      if (!p || !y || !std::isfinite(*p) || !std::isfinite(*y)) {
        problems.push_back(where + ": pitch/yaw not finite numbers");
        continue;
      }
      if (unit == "deg") {
        // Divide first so that 90 -> pi/2 and 180 -> pi exactly.
        r.label = {*p / 180.0 * geometry::kPi, *y / 180.0 * geometry::kPi};
      } else if (unit == "rad") {
        r.label = {*p, *y};
      } else {
        problems.push_back(where + ": unit must be 'deg' or 'rad', got '" + unit + "'");
        continue;
      }
      if (!(std::abs(r.label.pitch) < geometry::kPi / 2))
        problems.push_back(where + ": pitch outside (-90, 90) degrees");
      if (!(r.label.yaw > -geometry::kPi && r.label.yaw <= geometry::kPi))
        problems.push_back(where + ": yaw outside (-180, 180] degrees");
    }
    m.records.push_back(std::move(r));
  }

  const auto lm_path = root / "landmarks.csv";
  if (fs::exists(lm_path)) {
    const auto lm = csv::read(lm_path);
    static const std::array<const char*, 8> cols{"lx0", "ly0", "lx1", "ly1", "rx0", "ry0", "rx1", "ry1"};
    std::array<int, 8> idx{};
    const int lf = lm.column("file");
    bool ok = lf >= 0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      idx[k] = lm.column(cols[k]);
      ok = ok && idx[k] >= 0;
    }
    if (!ok) {
      problems.push_back("landmarks.csv: need columns file,lx0,ly0,lx1,ly1,rx0,ry0,rx1,ry1");
    } else {
      std::map<std::string, EyeCorners> by_file;
      for (std::size_t i = 0; i < lm.rows.size(); ++i) {
        const auto& row = lm.rows[i];
        const std::string where = "landmarks.csv line " + std::to_string(lm.line_numbers[i]);
        if (row.size() != lm.header.size()) {
          problems.push_back(where + ": wrong field count");
          continue;
        }
        std::array<double, 8> v{};
        bool good = true;
        for (std::size_t k = 0; k < 8; ++k) {
          const auto d = csv::parse_double(row[static_cast<std::size_t>(idx[k])]);
          good = good && d && std::isfinite(*d);
          v[k] = d.value_or(0.0);
        }
        if (!good) {
          problems.push_back(where + ": landmark coordinates must be finite numbers");
          continue;
        }
        by_file[row[static_cast<std::size_t>(lf)]] = {{{{v[0], v[1]}, {v[2], v[3]}}}, {{{v[4], v[5]}, {v[6], v[7]}}}};
      }
      for (auto& r : m.records)
        if (const auto it = by_file.find(r.file); it != by_file.end()) r.landmarks = it->second;
    }
  }
  if (!problems.empty()) throw DataError(problems);
  return m;
}

/// Decodes images and extracts patches. Samples without usable landmarks are
/// excluded with a reason rather than failing the whole load.
inline LoadedDataset load_samples(const DatasetManifest& manifest, const PatchOptions& opt = {}) {
  LoadedDataset out;
  out.manifest = manifest;
  for (const auto& r : manifest.records) {
    Sample s;
    s.file = r.file;
    s.subject = r.subject;
    s.label = r.label;
    s.class_id = r.class_id;
    s.landmarks = r.landmarks;
    try {
      s.face = image::load_png(manifest.root / "images" / r.file);
    } catch (const DataError& e) {
      out.excluded.push_back({r.file, e.what()});
      continue;
    }
    if (!r.landmarks) {
      if (opt.require_landmarks) {
        out.excluded.push_back({r.file, "no eye landmarks"});
        continue;
      }
      s.left_patch = cv::Mat(opt.height, opt.width, CV_32FC3, cv::Scalar::all(0.5));
      s.right_patch = s.left_patch.clone();
      s.illumination = image::mean_luma(s.face);
      out.samples.push_back(std::move(s));
      continue;
    }
    try {
      std::tie(s.left_patch, s.right_patch) = extract_eye_patches(s.face, *r.landmarks, opt);
    } catch (const DataError& e) {
      out.excluded.push_back({r.file, e.what()});
      continue;
    }
    s.illumination = image::mean_luma(s.face);
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic faces

struct SynthConfig {
  int count = 2000;
  std::uint64_t seed = 0;
  int subjects = 15;
  int size = 128;             // square image side
  double pitch_max_deg = 25;  // labels uniform in [-max, max]
  double yaw_max_deg = 45;
  double dark_fraction = 0.0;  // share of samples rendered at very low light
  double landmark_noise_px = 0.5;
};

struct SynthTruth {
  cv::Rect2d left_pupil, right_pupil;  // iris bounding boxes
  bool dark = false;
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<cv::Mat> images;
  std::vector<SynthTruth> truth;
};

namespace detail {

struct SubjectLook {
  cv::Vec3d skin, iris, background;
  double face_w, face_h, eye_spacing, eye_w, eye_h, light;
};

inline SubjectLook subject_look(std::uint64_t seed, int subject) {
  auto rng = make_rng(seed, {0x5B, static_cast<std::uint64_t>(subject)});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SubjectLook s;
  const double tone = 0.35 + 0.55 * u(rng);
  s.skin = {tone * (0.95 + 0.1 * u(rng)), tone * (0.75 + 0.1 * u(rng)), tone * (0.6 + 0.1 * u(rng))};
  s.iris = {0.1 + 0.4 * u(rng), 0.1 + 0.3 * u(rng), 0.05 + 0.4 * u(rng)};
  s.background = {u(rng), u(rng), u(rng)};
  s.face_w = 0.33 + 0.05 * u(rng);
  s.face_h = 0.43 + 0.05 * u(rng);
  s.eye_spacing = 0.14 + 0.03 * u(rng);
  s.eye_w = 0.07 + 0.015 * u(rng);
  s.eye_h = 0.032 + 0.008 * u(rng);
  s.light = 0.75 + 0.35 * u(rng);
  return s;
}

constexpr int kShift = 4;  // sub-pixel drawing precision, 1/16 px

inline cv::Point fixed(cv::Point2d p) {
  return {static_cast<int>(std::lround(p.x * (1 << kShift))), static_cast<int>(std::lround(p.y * (1 << kShift)))};
}
inline cv::Size fixed(cv::Size2d s) {
  return {static_cast<int>(std::lround(s.width * (1 << kShift))), static_cast<int>(std::lround(s.height * (1 << kShift)))};
}
inline int fixed(double r) { return static_cast<int>(std::lround(r * (1 << kShift))); }

inline cv::Scalar bgr8(const cv::Vec3d& rgb) {
  const auto c = [](double v) { return std::clamp(v, 0.0, 1.0) * 255.0; };
  return {c(rgb[2]), c(rgb[1]), c(rgb[0])};
}

}  // namespace detail

/// Iris displacement for a gaze direction, as a fraction of eye width:
/// rightward with yaw, upward with pitch.
inline cv::Point2d pupil_offset(const GazeAngles& g, double eye_w_px) {
  const double k = 0.55 * eye_w_px;
  return {k * std::cos(g.pitch) * std::sin(g.yaw), -k * std::sin(g.pitch)};
}

inline SynthDataset synth_generate(const SynthConfig& cfg) {
  SLYK_EXPECT(cfg.count >= 1, "synth_generate: count must be at least 1, got " << cfg.count);
  SLYK_EXPECT(cfg.subjects >= 1, "synth_generate: need at least one subject");
  SLYK_EXPECT(cfg.size >= 32, "synth_generate: image size must be at least 32");
  SynthDataset out;
  out.manifest.task = Task::kGaze;
  const double S = cfg.size;
  std::vector<detail::SubjectLook> looks;
  for (int s = 0; s < cfg.subjects; ++s) looks.push_back(detail::subject_look(cfg.seed, s));

  for (int i = 0; i < cfg.count; ++i) {
    auto rng = make_rng(cfg.seed, {0xFACE, static_cast<std::uint64_t>(i)});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int subject = i % cfg.subjects;
    const auto& L = looks[static_cast<std::size_t>(subject)];
    const GazeAngles g{geometry::deg2rad((2 * u(rng) - 1) * cfg.pitch_max_deg),
                       geometry::deg2rad((2 * u(rng) - 1) * cfg.yaw_max_deg)};
    const cv::Point2d centre(S / 2 + (u(rng) - 0.5) * 0.06 * S, S / 2 + (u(rng) - 0.5) * 0.06 * S);
    const double scale = 0.95 + 0.1 * u(rng);

    cv::Mat canvas(cfg.size, cfg.size, CV_8UC3, detail::bgr8(L.background));
    // Background gradient.
    for (int y = 0; y < cfg.size; ++y) {
      cv::Mat row = canvas.row(y);
      row.convertTo(row, -1, 0.7 + 0.3 * static_cast<double>(y) / S);
    }

    const cv::Size2d face_axes(L.face_w * S * scale, L.face_h * S * scale);
    cv::ellipse(canvas, detail::fixed(centre), detail::fixed(face_axes), 0, 0, 360, detail::bgr8(L.skin), cv::FILLED,
                cv::LINE_AA, detail::kShift);
    const double eye_y = centre.y - 0.07 * S * scale;
    const double ew = L.eye_w * S * scale, eh = L.eye_h * S * scale;
    const double iris_r = 0.45 * eh + 0.12 * ew;
    SynthTruth truth;
    std::array<std::array<cv::Point2d, 2>, 2> corners{};
    for (int side = 0; side < 2; ++side) {
      const double dir = side == 0 ? -1.0 : 1.0;
      const cv::Point2d eye(centre.x + dir * L.eye_spacing * S * scale, eye_y);
      // Sclera, then the iris clipped to the sclera.
      cv::Mat mask(canvas.size(), CV_8UC1, cv::Scalar(0));
      cv::ellipse(mask, detail::fixed(eye), detail::fixed(cv::Size2d(ew, eh)), 0, 0, 360, cv::Scalar(255), cv::FILLED,
                  cv::LINE_AA, detail::kShift);
      cv::Mat eye_layer(canvas.size(), CV_8UC3, detail::bgr8({0.93, 0.93, 0.9}));
      const cv::Point2d iris = eye + pupil_offset(g, ew);
      cv::circle(eye_layer, detail::fixed(iris), detail::fixed(iris_r), detail::bgr8(L.iris), cv::FILLED, cv::LINE_AA,
                 detail::kShift);
      cv::circle(eye_layer, detail::fixed(iris), detail::fixed(iris_r * 0.45), detail::bgr8({0.03, 0.03, 0.03}),
                 cv::FILLED, cv::LINE_AA, detail::kShift);
      cv::Mat canvas_f, layer_f, mask_f;
      canvas.convertTo(canvas_f, CV_32FC3);
      eye_layer.convertTo(layer_f, CV_32FC3);
      cv::Mat mask3;
      cv::cvtColor(mask, mask3, cv::COLOR_GRAY2BGR);
      mask3.convertTo(mask_f, CV_32FC3, 1.0 / 255.0);
      cv::Mat inv_mask;
      cv::subtract(cv::Scalar::all(1.0), mask_f, inv_mask);
      cv::Mat blended = layer_f.mul(mask_f) + canvas_f.mul(inv_mask);
      blended.convertTo(canvas, CV_8UC3);
      // Upper eyelid line and brow.
      cv::ellipse(canvas, detail::fixed(eye), detail::fixed(cv::Size2d(ew, eh)), 0, 180, 360,
                  detail::bgr8(L.skin * 0.45), 1, cv::LINE_AA, detail::kShift);
      cv::ellipse(canvas, detail::fixed(eye - cv::Point2d(0, 1.9 * eh)), detail::fixed(cv::Size2d(ew * 1.1, eh * 0.8)),
                  0, 200, 340, detail::bgr8(L.skin * 0.3), 2, cv::LINE_AA, detail::kShift);
      const cv::Rect2d box(iris.x - iris_r, iris.y - iris_r, 2 * iris_r, 2 * iris_r);
      (side == 0 ? truth.left_pupil : truth.right_pupil) = box;
      corners[static_cast<std::size_t>(side)] = {eye - cv::Point2d(ew, 0), eye + cv::Point2d(ew, 0)};
    }
    // Nose and mouth.
    cv::line(canvas, detail::fixed(centre + cv::Point2d(0, -0.02 * S)), detail::fixed(centre + cv::Point2d(0, 0.09 * S)),
             detail::bgr8(L.skin * 0.6), 2, cv::LINE_AA, detail::kShift);
    cv::ellipse(canvas, detail::fixed(centre + cv::Point2d(0, 0.2 * S * scale)),
                detail::fixed(cv::Size2d(0.08 * S * scale, 0.025 * S * scale)), 0, 0, 180,
                detail::bgr8({0.55, 0.2, 0.2}), 2, cv::LINE_AA, detail::kShift);

    cv::Mat img;
    cv::cvtColor(canvas, img, cv::COLOR_BGR2RGB);
    img.convertTo(img, CV_32FC3, 1.0 / 255.0);
    // Illumination: subject level, per-sample jitter and a side gradient.
    truth.dark = u(rng) < cfg.dark_fraction;
    const double level = L.light * (0.85 + 0.3 * u(rng)) * (truth.dark ? 0.22 : 1.0);
    const double side_light = (u(rng) - 0.5) * 0.5;
    cv::Mat gain(img.size(), CV_32FC1);
    for (int x = 0; x < img.cols; ++x)
      gain.col(x).setTo(level * (1.0 + side_light * (2.0 * x / S - 1.0)));
    cv::Mat gain3;
    cv::merge(std::vector<cv::Mat>{gain, gain, gain}, gain3);
    img = img.mul(gain3);
    // Keep normal and dark exposures apart in mean luma: dark frames land in
    // [0.04, 0.10], normal frames stay at or above 0.3.
    const double dark_target = 0.04 + 0.06 * u(rng);
    const double luma = image::mean_luma(img);
    if (truth.dark) {
      img.convertTo(img, -1, dark_target / luma);
    } else if (luma < 0.3) {
      img.convertTo(img, -1, 0.3 / luma);
    }
    cv::Mat noise(img.size(), CV_32FC3);
    std::normal_distribution<float> n(0.0f, 0.01f);
    for (int y = 0; y < noise.rows; ++y) {
      auto* row = noise.ptr<float>(y);
      for (int x = 0; x < noise.cols * 3; ++x) row[x] = n(rng);
    }
    img = image::clip01(img + noise);
    // Round through 8 bits so the in-memory image equals the decoded PNG.
    cv::Mat u8;
    img.convertTo(u8, CV_8UC3, 255.0);
    u8.convertTo(img, CV_32FC3, 1.0 / 255.0);

    std::normal_distribution<double> jitter(0.0, cfg.landmark_noise_px);
    EyeCorners lm;
    for (int k = 0; k < 2; ++k) {
      lm.left[static_cast<std::size_t>(k)] = corners[0][static_cast<std::size_t>(k)] + cv::Point2d(jitter(rng), jitter(rng));
      lm.right[static_cast<std::size_t>(k)] = corners[1][static_cast<std::size_t>(k)] + cv::Point2d(jitter(rng), jitter(rng));
    }
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    Record r;
    r.file = name;
    char subj[16];
    std::snprintf(subj, sizeof subj, "p%02d", subject);
    r.subject = subj;
    r.label = g;
    r.landmarks = lm;
    out.manifest.records.push_back(std::move(r));
    out.images.push_back(std::move(img));
    out.truth.push_back(truth);
  }
  return out;
}

/// Writes images/, labels.csv (radians) and landmarks.csv under `root`.
inline void write_dataset(const SynthDataset& ds, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError(root.string() + ": cannot create directory: " + ec.message());
  std::ofstream labels(root / "labels.csv"), lms(root / "landmarks.csv"), pupils(root / "pupils.csv");
  if (!labels || !lms || !pupils) throw IoError(root.string() + ": cannot write CSV files");
  labels << "file,subject,pitch,yaw,unit\n";
  lms << "file,lx0,ly0,lx1,ly1,rx0,ry0,rx1,ry1\n";
  pupils << "file,lx,ly,lw,lh,rx,ry,rw,rh,dark\n";
  const auto f = csv::format_double;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i) {
    const auto& r = ds.manifest.records[i];
    image::save_png(root / "images" / r.file, ds.images[i]);
    labels << r.file << ',' << r.subject << ',' << f(r.label.pitch) << ',' << f(r.label.yaw) << ",rad\n";
    const auto& lm = *r.landmarks;
    lms << r.file;
    for (const auto* eye : {&lm.left, &lm.right})
      for (const auto& p : *eye) lms << ',' << f(p.x) << ',' << f(p.y);
    lms << '\n';
    const auto& t = ds.truth[i];
    pupils << r.file;
    for (const auto* b : {&t.left_pupil, &t.right_pupil})
      pupils << ',' << f(b->x) << ',' << f(b->y) << ',' << f(b->width) << ',' << f(b->height);
    pupils << ',' << (t.dark ? 1 : 0) << '\n';
  }
  if (!labels || !lms || !pupils) throw IoError(root.string() + ": write failed");
}

/// In-memory samples for a generated set, identical to writing and reloading.
inline LoadedDataset synth_samples(const SynthDataset& ds, const PatchOptions& opt = {}) {
  LoadedDataset out;
  out.manifest = ds.manifest;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& r = ds.manifest.records[i];
    Sample s;
    s.file = r.file;
    s.subject = r.subject;
    s.label = r.label;
    s.landmarks = r.landmarks;
    s.face = ds.images[i];
    try {
      std::tie(s.left_patch, s.right_patch) = extract_eye_patches(s.face, *r.landmarks, opt);
    } catch (const DataError& e) {
      out.excluded.push_back({r.file, e.what()});
      continue;
    }
    s.illumination = image::mean_luma(s.face);
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitManifest {
  std::vector<std::size_t> train, val, test;
};

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

inline SplitManifest split_random(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train >= 0 && f.val >= 0 && f.test >= 0 && std::abs(f.train + f.val + f.test - 1.0) < 1e-9))
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, {0x5117});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
  SplitManifest s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

/// All of `subject` in test; the remainder in train except its last
/// `val_fraction`, which is held out for validation.
inline SplitManifest split_loso(const std::vector<std::string>& subjects, const std::string& subject,
                                double val_fraction) {
  if (std::find(subjects.begin(), subjects.end(), subject) == subjects.end())
    throw ConfigError("split: unknown subject '" + subject + "'");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("split: validation fraction outside [0, 1)");
  SplitManifest s;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < subjects.size(); ++i) (subjects[i] == subject ? s.test : rest).push_back(i);
  const auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(rest.size())));
  s.train.assign(rest.begin(), rest.end() - static_cast<std::ptrdiff_t>(n_val));
  s.val.assign(rest.end() - static_cast<std::ptrdiff_t>(n_val), rest.end());
  return s;
}

inline std::vector<std::string> subject_list(const std::vector<std::string>& subjects) {
  std::vector<std::string> out(subjects);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <class Range>
std::vector<std::string> subjects_of(const Range& items) {
  std::vector<std::string> out;
  for (const auto& it : items) out.push_back(it.subject);
  return out;
}

}  // namespace slyk::data
