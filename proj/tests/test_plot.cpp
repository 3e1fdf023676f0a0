#include <gtest/gtest.h>

#include <fstream>

#include "slyk/plot.hpp"

using namespace slyk;
using namespace slyk::plot;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slyk_plot_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

cv::Mat grey_face() { return cv::Mat(64, 64, CV_32FC3, cv::Scalar::all(0.5)); }

// Pixels that a drawing changed relative to the plain canvas.
cv::Mat changed(const cv::Mat& drawn, const cv::Mat& base) {
  cv::Mat diff, gray;
  cv::absdiff(drawn, base, diff);
  cv::cvtColor(diff, gray, cv::COLOR_RGB2GRAY);
  return gray > 1e-6f;
}

}  // namespace

TEST(Plot, PerfectPredictionArrowsCoincide) {
  const OverlayStyle style;
  const auto base = base_canvas(grey_face(), style);
  const GazeAngles g{0.2, -0.4};
  cv::Mat truth = base.clone(), pred = base.clone();
  draw_arrow(truth, g, kTruthColour, style);
  draw_arrow(pred, g, kPredColour, style);
  const auto a = changed(truth, base), b = changed(pred, base);
  EXPECT_GT(cv::countNonZero(a), 0);
  EXPECT_EQ(cv::countNonZero(a != b), 0);
  // With both drawn, the prediction hides the truth arrow completely.
  cv::Mat both = base.clone();
  draw_arrow(both, g, kTruthColour, style);
  draw_arrow(both, g, kPredColour, style);
  cv::Mat pure_pred = base.clone();
  draw_arrow(pure_pred, g, kPredColour, style);
  cv::Mat both_g, pred_g;
  cv::extractChannel(both, both_g, 1);
  cv::extractChannel(pure_pred, pred_g, 1);
  // Anti-aliased edges blend with what lies beneath; the arrow core does not.
  cv::Mat core;
  cv::erode(a, core, cv::Mat());
  cv::Mat delta;
  cv::absdiff(both_g, pred_g, delta);
  double worst = 0;
  cv::minMaxLoc(delta, nullptr, &worst, nullptr, nullptr, core);
  EXPECT_LT(worst, 1e-6);
}

TEST(Plot, PositiveYawPointsRightAndPositivePitchPointsUp) {
  const cv::Point2d o(100, 100);
  const auto right = arrow_tip(o, {0.0, 0.5}, 50);
  EXPECT_GT(right.x, o.x);
  EXPECT_NEAR(right.y, o.y, 1e-12);
  EXPECT_NEAR(right.x - o.x, 50 * std::sin(0.5), 1e-12);
  const auto up = arrow_tip(o, {0.3, 0.0}, 50);
  EXPECT_LT(up.y, o.y);

  // Rendered: the arrow pixels sit in the right half of the face.
  const OverlayStyle style;
  const auto base = base_canvas(grey_face(), style);
  cv::Mat img = base.clone();
  draw_arrow(img, {0.0, 0.6}, kPredColour, style);
  const auto mask = changed(img, base);
  const int half = style.size / 2;
  EXPECT_GT(cv::countNonZero(mask(cv::Rect(half + 4, 0, style.size - half - 4, style.size))), 50);
  EXPECT_EQ(cv::countNonZero(mask(cv::Rect(0, 0, half - 4, style.size))), 0);
}

TEST(Plot, OverlayHasCaptionStrip) {
  const OverlayStyle style;
  const auto img = overlay(grey_face(), {0, 0}, {0.1, 0.1}, style);
  EXPECT_EQ(img.rows, style.size + style.caption_height);
  EXPECT_EQ(img.cols, style.size);
  const cv::Mat strip = img(cv::Rect(0, style.size, style.size, style.caption_height));
  double lo = 1;
  cv::minMaxLoc(strip.reshape(1), &lo);
  EXPECT_LT(lo, 0.5);  // caption text present
}

TEST(Plot, WritesDeterministicFiles) {
  data::SynthConfig sc;
  sc.count = 3;
  sc.size = 64;
  const auto loaded = data::synth_samples(data::synth_generate(sc));
  std::vector<const data::Sample*> ptrs;
  std::vector<GazeAngles> preds;
  for (const auto& s : loaded.samples) {
    ptrs.push_back(&s);
    preds.push_back({s.label.pitch + 0.05, s.label.yaw - 0.1});
  }
  const auto d1 = temp_dir("a"), d2 = temp_dir("b");
  const auto p1 = write_overlays(ptrs, preds, d1);
  const auto p2 = write_overlays(ptrs, preds, d2);
  ASSERT_EQ(p1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(fs::exists(p1[i]));
    EXPECT_EQ(read_file(p1[i]), read_file(p2[i]));
  }
  eval::EquivarianceCurve curve{"h", {{0, 3.0, 10, 0}, {10, 4.5, 10, 0}, {20, 7.0, 9, 1}}};
  const auto c1 = write_equivariance_chart(curve, d1), c2 = write_equivariance_chart(curve, d2);
  EXPECT_EQ(read_file(c1), read_file(c2));
  EXPECT_FALSE(read_file(c1).empty());
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Plot, UnwritableDirectoryRaises) {
  const auto d = temp_dir("blocked");
  fs::create_directories(d.parent_path());
  { std::ofstream f(d); f << "x"; }  // a file where the directory should go
  data::SynthConfig sc;
  sc.count = 1;
  sc.size = 64;
  const auto loaded = data::synth_samples(data::synth_generate(sc));
  EXPECT_THROW(write_overlays({&loaded.samples[0]}, {loaded.samples[0].label}, d / "sub"), IoError);
  fs::remove(d);
}
