#pragma once

// Stochastic view generation for self-supervised pretraining.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "slyk/image.hpp"
#include "slyk/rng.hpp"

namespace slyk::augment {

/// Application order. A pipeline always runs its transforms in this order,
/// whatever order the configuration lists them in.
inline constexpr std::array<std::string_view, 11> kTransformOrder{
    "horizontal_flip", "gaussian_blur", "random_affine",  "random_rotation", "random_crop",   "center_crop",
    "random_grayscale", "color_jitter", "random_invert", "gaussian_noise",  "cutout"};

struct TransformSpec {
  std::string name;
  double p = 0.0;
  std::map<std::string, double> params;  // missing keys take the defaults below
};

struct AugmentationConfig {
  std::vector<TransformSpec> transforms;
  int out_h = 112;
  int out_w = 112;
  std::uint64_t seed = 0;
};

inline const std::map<std::string, double>& default_params(std::string_view name) {
  static const std::map<std::string_view, std::map<std::string, double>> table{
      {"horizontal_flip", {}},
      {"gaussian_blur", {{"sigma_min", 0.1}, {"sigma_max", 2.0}}},
      {"random_affine", {{"degrees", 10.0}, {"translate", 0.1}, {"scale_min", 0.9}, {"scale_max", 1.1}, {"shear", 5.0}}},
      {"random_rotation", {{"degrees", 30.0}}},
      {"random_crop", {{"scale_min", 0.6}, {"scale_max", 1.0}, {"ratio_min", 0.75}, {"ratio_max", 4.0 / 3.0}}},
      {"center_crop", {{"fraction", 1.0}}},
      {"random_grayscale", {}},
      {"color_jitter", {{"brightness", 0.4}, {"contrast", 0.4}, {"saturation", 0.4}, {"hue", 0.1}}},
      {"random_invert", {}},
      {"gaussian_noise", {{"sigma", 0.02}}},
      {"cutout", {{"size", 16.0}, {"holes", 1.0}}},
  };
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("augmentation: unknown transform '" + std::string(name) + "'");
  return it->second;
}

inline AugmentationConfig default_config(int out_h, int out_w) {
  AugmentationConfig cfg;
  cfg.out_h = out_h;
  cfg.out_w = out_w;
  cfg.transforms = {{"horizontal_flip", 0.5, {}}, {"gaussian_blur", 0.2, {}}, {"random_affine", 0.3, {}},
                    {"random_rotation", 0.3, {}}, {"random_crop", 0.5, {}},   {"center_crop", 1.0, {}},
                    {"random_grayscale", 0.2, {}}, {"color_jitter", 0.4, {}}, {"random_invert", 0.1, {}},
                    {"gaussian_noise", 0.2, {}},  {"cutout", 0.3, {}}};
  return cfg;
}

/// Keeps only the listed transforms of `cfg`, at the given output size.
inline AugmentationConfig subset(const AugmentationConfig& cfg, const std::vector<std::string_view>& keep, int out_h,
                                 int out_w) {
  AugmentationConfig out = cfg;
  out.out_h = out_h;
  out.out_w = out_w;
  std::erase_if(out.transforms, [&](const TransformSpec& t) {
    return std::find(keep.begin(), keep.end(), t.name) == keep.end();
  });
  return out;
}

/// Colour and noise transforms only. Used for eye patches, whose location is
/// fixed by the landmark crop.
inline AugmentationConfig photometric_subset(const AugmentationConfig& cfg, int out_h, int out_w) {
  return subset(cfg, {"gaussian_blur", "random_grayscale", "color_jitter", "random_invert", "gaussian_noise"}, out_h,
                out_w);
}

/// Transforms of the original BYOL recipe.
inline AugmentationConfig byol_subset(const AugmentationConfig& cfg) {
  return subset(cfg, {"horizontal_flip", "gaussian_blur", "random_crop", "center_crop", "random_grayscale",
                      "color_jitter"},
                cfg.out_h, cfg.out_w);
}

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline cv::Mat warp(const cv::Mat& img, const cv::Mat& m) {
  cv::Mat out;
  cv::warpAffine(img, out, m, img.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return out;
}

inline cv::Mat to_gray3(const cv::Mat& img) {
  cv::Mat g, out;
  cv::cvtColor(img, g, cv::COLOR_RGB2GRAY);
  cv::cvtColor(g, out, cv::COLOR_GRAY2RGB);
  return out;
}

inline cv::Mat crop_resize(const cv::Mat& img, cv::Rect box) {
  box &= cv::Rect(0, 0, img.cols, img.rows);
  return image::resize_to(img(box), img.rows, img.cols);
}

}  // namespace detail

class Pipeline {
 public:
  struct Step {
    std::size_t kind;  // index into kTransformOrder
    double p;
    std::map<std::string, double> params;
  };

  explicit Pipeline(const AugmentationConfig& cfg) : out_h_(cfg.out_h), out_w_(cfg.out_w) {
    std::vector<std::string> problems;
    if (cfg.out_h <= 0 || cfg.out_w <= 0) problems.push_back("augmentation: output size must be positive");
    std::vector<bool> seen(kTransformOrder.size(), false);
    for (const auto& t : cfg.transforms) {
      const auto it = std::find(kTransformOrder.begin(), kTransformOrder.end(), t.name);
      if (it == kTransformOrder.end()) {
        problems.push_back("augmentation: unknown transform '" + t.name + "'");
        continue;
      }
      const auto kind = static_cast<std::size_t>(it - kTransformOrder.begin());
      if (seen[kind]) problems.push_back("augmentation: transform '" + t.name + "' listed twice");
      seen[kind] = true;
      if (!(t.p >= 0.0 && t.p <= 1.0))
        problems.push_back("augmentation: probability of '" + t.name + "' outside [0, 1]");
      auto params = default_params(t.name);
      for (const auto& [k, v] : t.params) {
        if (!params.contains(k)) problems.push_back("augmentation: '" + t.name + "' has no parameter '" + k + "'");
        params[k] = v;
      }
      steps_.push_back({kind, t.p, std::move(params)});
    }
    if (!problems.empty()) throw ConfigError(problems);
    std::sort(steps_.begin(), steps_.end(), [](const Step& a, const Step& b) { return a.kind < b.kind; });
  }

  int out_h() const noexcept { return out_h_; }
  int out_w() const noexcept { return out_w_; }
  const std::vector<Step>& steps() const noexcept { return steps_; }

  /// Runs every gated transform, then resizes to the output size. `fired`, when
  /// given, receives one flag per kTransformOrder entry.
  cv::Mat apply(const cv::Mat& input, std::mt19937_64& rng, std::vector<bool>* fired = nullptr) const {
    image::expect_rgb(input, "augmentation");
    if (fired) fired->assign(kTransformOrder.size(), false);
    cv::Mat img = input.clone();
    for (const auto& s : steps_) {
      // The gate draw is consumed even for p = 0 or 1 so that changing one
      // probability does not shift the random stream of later transforms.
      const bool on = detail::uniform(rng, 0.0, 1.0) < s.p;
      if (!on) continue;
      if (fired) (*fired)[s.kind] = true;
      img = run(s, img, rng);
    }
    return image::resize_to(img, out_h_, out_w_);
  }

  cv::Mat apply(const cv::Mat& input, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return apply(input, rng);
  }

 private:
  cv::Mat run(const Step& s, const cv::Mat& img, std::mt19937_64& rng) const {
    const auto& P = s.params;
    const auto at = [&](const char* k) { return P.at(k); };
    const double w = img.cols, h = img.rows;
    const cv::Point2f centre(static_cast<float>((w - 1) / 2), static_cast<float>((h - 1) / 2));
    switch (s.kind) {
      case 0: {  // horizontal_flip
        cv::Mat out;
        cv::flip(img, out, 1);
        return out;
      }
      case 1: {  // gaussian_blur
        const double sigma = detail::uniform(rng, at("sigma_min"), at("sigma_max"));
        if (sigma <= 0.0) return img;
        const int k = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
        cv::Mat out;
        cv::GaussianBlur(img, out, cv::Size(k, k), sigma, sigma, cv::BORDER_REFLECT_101);
        return out;
      }
      case 2: {  // random_affine
        const double deg = detail::uniform(rng, -at("degrees"), at("degrees"));
        const double tx = detail::uniform(rng, -at("translate"), at("translate")) * w;
        const double ty = detail::uniform(rng, -at("translate"), at("translate")) * h;
        const double sc = detail::uniform(rng, at("scale_min"), at("scale_max"));
        const double sh = std::tan(detail::uniform(rng, -at("shear"), at("shear")) * CV_PI / 180.0);
        cv::Mat m = cv::getRotationMatrix2D(centre, deg, sc);
        // Horizontal shear about the centre, applied after rotation/scale.
        cv::Mat shear = (cv::Mat_<double>(3, 3) << 1, sh, -sh * centre.y, 0, 1, 0, 0, 0, 1);
        cv::Mat m3 = cv::Mat::eye(3, 3, CV_64F);
        m.copyTo(m3.rowRange(0, 2));
        cv::Mat full = shear * m3;
        full.at<double>(0, 2) += tx;
        full.at<double>(1, 2) += ty;
        return detail::warp(img, full.rowRange(0, 2));
      }
      case 3: {  // random_rotation
        return image::rotate(img, detail::uniform(rng, -at("degrees"), at("degrees")));
      }
      case 4: {  // random_crop (area fraction and aspect ratio sampled, resized back)
        const double area = detail::uniform(rng, at("scale_min"), at("scale_max")) * w * h;
        const double log_r = detail::uniform(rng, std::log(at("ratio_min")), std::log(at("ratio_max")));
        const double r = std::exp(log_r);
        const int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * r))), 1, img.cols);
        const int ch = std::clamp(static_cast<int>(std::lround(std::sqrt(area / r))), 1, img.rows);
        const int x0 = std::uniform_int_distribution<int>(0, img.cols - cw)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, img.rows - ch)(rng);
        return detail::crop_resize(img, {x0, y0, cw, ch});
      }
      case 5: {  // center_crop: largest centred box with the output aspect, scaled by `fraction`
        const double target = static_cast<double>(out_w_) / out_h_;
        double cw = w, ch = h;
        if (w / h > target) cw = h * target; else ch = w / target;
        cw *= at("fraction");
        ch *= at("fraction");
        const int iw = std::max(1, static_cast<int>(std::lround(cw)));
        const int ih = std::max(1, static_cast<int>(std::lround(ch)));
        const cv::Rect box((img.cols - iw) / 2, (img.rows - ih) / 2, iw, ih);
        return img(box & cv::Rect(0, 0, img.cols, img.rows)).clone();
      }
      case 6:  // random_grayscale
        return detail::to_gray3(img);
      case 7: {  // color_jitter: brightness, contrast, saturation, hue
        const double b = detail::uniform(rng, 1.0 - at("brightness"), 1.0 + at("brightness"));
        const double c = detail::uniform(rng, 1.0 - at("contrast"), 1.0 + at("contrast"));
        const double sat = detail::uniform(rng, 1.0 - at("saturation"), 1.0 + at("saturation"));
        const double hue = detail::uniform(rng, -at("hue"), at("hue"));
        // Per-channel affine maps go through convertTo/addWeighted: MatExpr
        // arithmetic with a scalar shifts channel 0 only.
        cv::Mat out;
        img.convertTo(out, -1, b);
        out = image::clip01(out);
        const double mean_gray = cv::mean(detail::to_gray3(out))[0];
        out.convertTo(out, -1, c, mean_gray * (1.0 - c));
        out = image::clip01(out);
        const cv::Mat gray = detail::to_gray3(out);
        cv::addWeighted(out, sat, gray, 1.0 - sat, 0.0, out);
        out = image::clip01(out);
        if (hue != 0.0) {
          cv::Mat hsv;
          cv::cvtColor(out, hsv, cv::COLOR_RGB2HSV);  // H in [0, 360)
          for (int y = 0; y < hsv.rows; ++y) {
            auto* row = hsv.ptr<cv::Vec3f>(y);
            for (int x = 0; x < hsv.cols; ++x) {
              float hh = row[x][0] + static_cast<float>(hue * 360.0);
              hh = std::fmod(hh, 360.0f);
              if (hh < 0) hh += 360.0f;
              row[x][0] = hh;
            }
          }
          cv::cvtColor(hsv, out, cv::COLOR_HSV2RGB);
          out = image::clip01(out);
        }
        return out;
      }
      case 8: {  // random_invert
        cv::Mat out;
        cv::subtract(cv::Scalar::all(1.0), img, out);
        return out;
      }
      case 9: {  // gaussian_noise
        std::normal_distribution<float> n(0.0f, static_cast<float>(at("sigma")));
        cv::Mat out = img.clone();
        for (int y = 0; y < out.rows; ++y) {
          auto* row = out.ptr<float>(y);
          for (int x = 0; x < out.cols * 3; ++x) row[x] += n(rng);
        }
        return image::clip01(out);
      }
      case 10: {  // cutout: `holes` zero squares, side given in output pixels
        cv::Mat out = img.clone();
        const int holes = static_cast<int>(at("holes"));
        const int sw = std::max(1, static_cast<int>(std::lround(at("size") * w / out_w_)));
        const int sh = std::max(1, static_cast<int>(std::lround(at("size") * h / out_h_)));
        for (int i = 0; i < holes; ++i) {
          const int cx = std::uniform_int_distribution<int>(0, img.cols - 1)(rng);
          const int cy = std::uniform_int_distribution<int>(0, img.rows - 1)(rng);
          const cv::Rect box = cv::Rect(cx - sw / 2, cy - sh / 2, sw, sh) & cv::Rect(0, 0, img.cols, img.rows);
          out(box).setTo(cv::Scalar::all(0.0));
        }
        return out;
      }
      default:
        throw ContractError("augmentation: bad transform index");
    }
  }

  int out_h_, out_w_;
  std::vector<Step> steps_;
};

inline Pipeline build_pipeline(const AugmentationConfig& cfg) { return Pipeline(cfg); }

struct ViewPair {
  cv::Mat v;
  cv::Mat v2;
};

/// Two independent draws from `pipeline`, seeded from distinct sub-seeds.
inline ViewPair generate_views(const cv::Mat& img, const Pipeline& pipeline, std::uint64_t seed) {
  SLYK_EXPECT(!img.empty() && img.channels() == 3, "generate_views: expected a 3-channel image, got "
                                                       << img.channels() << " channels");
  return {pipeline.apply(img, derive_seed(seed, {0})), pipeline.apply(img, derive_seed(seed, {1}))};
}

}  // namespace slyk::augment
