#pragma once

// Images are cv::Mat CV_32FC3 in RGB order with values in [0, 1].

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "slyk/errors.hpp"
#include "slyk/tensor.hpp"

namespace slyk::image {

inline void expect_rgb(const cv::Mat& img, const char* what) {
  SLYK_EXPECT(!img.empty() && img.type() == CV_32FC3,
              what << ": expected a non-empty 3-channel float image, got type " << img.type() << " with "
                   << img.channels() << " channels");
}

inline cv::Mat load_png(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError(path.string() + ": cannot decode image");
  if (raw.channels() == 1) cv::cvtColor(raw, raw, cv::COLOR_GRAY2BGR);
  if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2BGR);
  if (raw.channels() != 3) throw DataError(path.string() + ": unsupported channel count");
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat out;
  rgb.convertTo(out, CV_32FC3, scale);
  return out;
}

/// 8-bit encoding of a [0, 1] RGB image.
inline std::vector<unsigned char> encode_png(const cv::Mat& img) {
  expect_rgb(img, "encode_png");
  cv::Mat bgr, u8;
  cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", u8, buf)) throw IoError("PNG encoding failed");
  return buf;
}

inline void save_png(const std::filesystem::path& path, const cv::Mat& img) {
  expect_rgb(img, "save_png");
  cv::Mat bgr, u8;
  cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), u8)) throw IoError(path.string() + ": cannot write image");
}

inline cv::Mat resize_to(const cv::Mat& img, int h, int w) {
  SLYK_EXPECT(h > 0 && w > 0, "resize_to: invalid size " << h << "x" << w);
  if (img.rows == h && img.cols == w) return img.clone();
  cv::Mat out;
  const bool shrink = h < img.rows && w < img.cols;
  cv::resize(img, out, cv::Size(w, h), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

inline cv::Mat clip01(cv::Mat img) {
  cv::min(img, 1.0, img);
  cv::max(img, 0.0, img);
  return img;
}

/// Mean Rec.601 luma in [0, 1].
inline double mean_luma(const cv::Mat& img) {
  expect_rgb(img, "mean_luma");
  const cv::Scalar m = cv::mean(img);
  return 0.299 * m[0] + 0.587 * m[1] + 0.114 * m[2];
}

/// Rotates about the exact image centre by `degrees` counter-clockwise (as
/// displayed), bilinear with mirrored borders. Zero is a plain copy.
inline cv::Mat rotate(const cv::Mat& img, double degrees) {
  if (degrees == 0.0) return img.clone();
  const cv::Point2f centre(static_cast<float>(img.cols - 1) / 2.0f, static_cast<float>(img.rows - 1) / 2.0f);
  const cv::Mat m = cv::getRotationMatrix2D(centre, degrees, 1.0);
  cv::Mat out;
  cv::warpAffine(img, out, m, img.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return out;
}

/// Maps a point through the same rotation as rotate().
inline cv::Point2d rotate_point(const cv::Point2d& p, int rows, int cols, double degrees) {
  const double cx = (cols - 1) / 2.0, cy = (rows - 1) / 2.0;
  const double a = degrees * CV_PI / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double dx = p.x - cx, dy = p.y - cy;
  // y points down, so a counter-clockwise turn on screen is (c, s; -s, c).
  return {cx + c * dx + s * dy, cy - s * dx + c * dy};
}

/// Writes an HxWx3 image into a CHW float buffer.
template <class T>
void to_chw(const cv::Mat& img, T* dst) {
  expect_rgb(img, "to_chw");
  const int h = img.rows, w = img.cols;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    const auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) dst[c * plane + static_cast<std::size_t>(y) * w + x] = static_cast<T>(row[x][c]);
  }
}

/// Stacks equally sized images into an (N, 3, H, W) tensor.
template <class T>
nn::Tensor<T> to_batch(const std::vector<const cv::Mat*>& imgs) {
  SLYK_EXPECT(!imgs.empty(), "to_batch: no images");
  const int h = imgs.front()->rows, w = imgs.front()->cols;
  nn::Tensor<T> out({static_cast<int>(imgs.size()), 3, h, w});
  const std::size_t stride = static_cast<std::size_t>(3) * h * w;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    SLYK_EXPECT(imgs[i]->rows == h && imgs[i]->cols == w, "to_batch: image " << i << " is " << imgs[i]->rows << "x"
                                                                             << imgs[i]->cols << ", expected " << h
                                                                             << "x" << w);
    to_chw(*imgs[i], out.data() + i * stride);
  }
  return out;
}

}  // namespace slyk::image
