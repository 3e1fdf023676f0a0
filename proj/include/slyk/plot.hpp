#pragma once

// Gaze overlays (ground truth and prediction arrows from the face centre)
// and the equivariance line chart. Rendering is pure OpenCV drawing, so the
// bytes depend only on the inputs.

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "slyk/evaluation.hpp"

namespace slyk::plot {

using geometry::GazeAngles;

struct OverlayStyle {
  int size = 256;            // rendered face side in pixels
  double arrow_length = 0.4;  // fraction of the side for a unit in-plane gaze
  int thickness = 2;
  int caption_height = 28;
};

// Colours in RGB order, [0, 1].
inline const cv::Scalar kTruthColour(0.0, 0.85, 0.0);
inline const cv::Scalar kPredColour(0.9, 0.0, 0.0);

/// Arrow tip for a gaze direction: the (x, y) components of the 3D unit
/// vector scaled by `length`, with image y pointing down.
inline cv::Point2d arrow_tip(const cv::Point2d& origin, const GazeAngles& g, double length) {
  const auto v = geometry::angles_to_vector(g);
  return {origin.x + length * v.x, origin.y - length * v.y};
}

inline void draw_arrow(cv::Mat& canvas, const GazeAngles& g, const cv::Scalar& colour, const OverlayStyle& style) {
  const cv::Point2d origin((style.size - 1) / 2.0, (style.size - 1) / 2.0);
  const auto tip = arrow_tip(origin, g, style.arrow_length * style.size);
  constexpr int kShift = 4;
  const auto fx = [](cv::Point2d p) {
    return cv::Point(static_cast<int>(std::lround(p.x * (1 << kShift))), static_cast<int>(std::lround(p.y * (1 << kShift))));
  };
  cv::arrowedLine(canvas, fx(origin), fx(tip), colour, style.thickness, cv::LINE_AA, kShift, 0.2);
}

/// The face resized to `style.size` without arrows or caption.
inline cv::Mat base_canvas(const cv::Mat& face, const OverlayStyle& style) {
  image::expect_rgb(face, "overlay");
  cv::Mat out;
  cv::resize(face, out, cv::Size(style.size, style.size), 0, 0, cv::INTER_LINEAR);
  return out;
}

/// Face with both arrows (prediction drawn last) and an error caption below.
inline cv::Mat overlay(const cv::Mat& face, const GazeAngles& truth, const GazeAngles& pred,
                       const OverlayStyle& style = {}) {
  cv::Mat canvas = base_canvas(face, style);
  draw_arrow(canvas, truth, kTruthColour, style);
  draw_arrow(canvas, pred, kPredColour, style);
  cv::Mat out(style.size + style.caption_height, style.size, CV_32FC3, cv::Scalar::all(1.0));
  canvas.copyTo(out(cv::Rect(0, 0, style.size, style.size)));
  std::ostringstream caption;
  caption << "error " << eval::fmt(geometry::angular_error(truth, pred)) << " deg";
  cv::putText(out, caption.str(), {6, style.size + style.caption_height - 9}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
              cv::Scalar::all(0.0), 1, cv::LINE_AA);
  return out;
}

/// Line chart of mean angular error against rotation angle.
inline cv::Mat equivariance_chart(const eval::EquivarianceCurve& curve, int width = 480, int height = 320) {
  SLYK_EXPECT(!curve.points.empty(), "equivariance_chart: empty curve");
  cv::Mat img(height, width, CV_32FC3, cv::Scalar::all(1.0));
  const int left = 56, right = 16, top = 20, bottom = 44;
  const cv::Rect plot(left, top, width - left - right, height - top - bottom);
  double tmin = curve.points.front().theta_deg, tmax = curve.points.back().theta_deg, emax = 0;
  for (const auto& p : curve.points)
    if (std::isfinite(p.mean_error_deg)) emax = std::max(emax, p.mean_error_deg);
  if (tmax == tmin) tmax = tmin + 1;
  emax = emax > 0 ? emax * 1.1 : 1.0;
  const auto to_px = [&](double t, double e) {
    return cv::Point(plot.x + static_cast<int>(std::lround((t - tmin) / (tmax - tmin) * plot.width)),
                     plot.y + plot.height - static_cast<int>(std::lround(e / emax * plot.height)));
  };
  const cv::Scalar black = cv::Scalar::all(0.0), grey = cv::Scalar::all(0.8);
  const auto label = [&](const std::string& s, cv::Point at) {
    cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
  };
  for (int k = 0; k <= 4; ++k) {
    const double e = emax * k / 4;
    const auto a = to_px(tmin, e), b = to_px(tmax, e);
    cv::line(img, a, b, grey, 1, cv::LINE_8);
    label(eval::fmt(e, 1), {4, a.y + 4});
  }
  for (const auto& p : curve.points) {
    const auto a = to_px(p.theta_deg, 0);
    std::ostringstream os;
    os << p.theta_deg;
    label(os.str(), {a.x - 6, plot.y + plot.height + 16});
  }
  cv::rectangle(img, plot, black, 1, cv::LINE_8);
  label("rotation (deg)", {plot.x + plot.width / 2 - 44, height - 8});
  label("error (deg)", {4, 12});
  std::vector<cv::Point> line;
  for (const auto& p : curve.points)
    if (std::isfinite(p.mean_error_deg)) line.push_back(to_px(p.theta_deg, p.mean_error_deg));
  if (line.size() > 1) cv::polylines(img, line, false, kPredColour, 2, cv::LINE_AA);
  for (const auto& pt : line) cv::circle(img, pt, 3, kPredColour, cv::FILLED, cv::LINE_AA);
  return img;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": cannot create output directory");
}

inline void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  try {
    image::save_png(path, img);
  } catch (const cv::Exception& e) {
    throw IoError(path.string() + ": cannot write image (" + e.what() + ")");
  }
}

/// Writes one overlay per sample and returns the paths in sample order.
inline std::vector<std::filesystem::path> write_overlays(const std::vector<const data::Sample*>& samples,
                                                         const std::vector<GazeAngles>& preds,
                                                         const std::filesystem::path& out_dir,
                                                         const OverlayStyle& style = {}) {
  SLYK_EXPECT(samples.size() == preds.size(), "write_overlays: " << samples.size() << " samples but " << preds.size()
                                                                  << " predictions");
  ensure_dir(out_dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "overlay_%04zu_", i);
    const auto path = out_dir / (prefix + std::filesystem::path(samples[i]->file).stem().string() + ".png");
    write_png(path, overlay(samples[i]->face, samples[i]->label, preds[i], style));
    paths.push_back(path);
  }
  return paths;
}

inline std::filesystem::path write_equivariance_chart(const eval::EquivarianceCurve& curve,
                                                      const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const auto path = out_dir / "equivariance.png";
  write_png(path, equivariance_chart(curve));
  return path;
}

}  // namespace slyk::plot
