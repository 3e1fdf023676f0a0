#include <gtest/gtest.h>

#include <cmath>

#include "slyk/augmentation.hpp"

using namespace slyk::augment;
namespace image = slyk::image;

namespace {

cv::Mat random_image(int h, int w, std::uint64_t seed) {
  cv::Mat img(h, w, CV_32FC3);
  cv::RNG rng(seed);
  rng.fill(img, cv::RNG::UNIFORM, 0.0, 1.0);
  return img;
}

bool identical(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

AugmentationConfig only(const std::string& name, double p, int h, int w) {
  AugmentationConfig cfg;
  cfg.out_h = h;
  cfg.out_w = w;
  cfg.transforms = {{name, p, {}}};
  return cfg;
}

}  // namespace

TEST(Augmentation, AllZeroProbabilitiesIsResize) {
  auto cfg = default_config(32, 24);
  for (auto& t : cfg.transforms) t.p = 0.0;
  const auto img = random_image(48, 40, 1);
  const auto out = build_pipeline(cfg).apply(img, 7);
  EXPECT_TRUE(identical(out, image::resize_to(img, 32, 24)));
}

TEST(Augmentation, FlipOnlyMirrors) {
  const auto img = random_image(20, 30, 2);
  const auto out = build_pipeline(only("horizontal_flip", 1.0, 20, 30)).apply(img, 3);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) EXPECT_EQ(out.at<cv::Vec3f>(y, x), img.at<cv::Vec3f>(y, 29 - x));
}

TEST(Augmentation, FixedSeedIsByteIdentical) {
  const auto pipeline = build_pipeline(default_config(32, 32));
  const auto img = random_image(40, 40, 4);
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    EXPECT_TRUE(identical(pipeline.apply(img, seed), pipeline.apply(img, seed)));
    const auto a = generate_views(img, pipeline, seed), b = generate_views(img, pipeline, seed);
    EXPECT_TRUE(identical(a.v, b.v));
    EXPECT_TRUE(identical(a.v2, b.v2));
  }
}

TEST(Augmentation, IdentityViewsEqualResizedInput) {
  AugmentationConfig cfg;
  cfg.out_h = 16;
  cfg.out_w = 16;
  const auto img = random_image(24, 24, 5);
  const auto views = generate_views(img, build_pipeline(cfg), 11);
  EXPECT_TRUE(identical(views.v, image::resize_to(img, 16, 16)));
  EXPECT_TRUE(identical(views.v2, views.v));
}

TEST(Augmentation, RotationViewsDiffer) {
  const auto img = random_image(24, 24, 6);
  const auto views = generate_views(img, build_pipeline(only("random_rotation", 1.0, 24, 24)), 12);
  EXPECT_FALSE(identical(views.v, views.v2));
}

TEST(Augmentation, EveryTransformPreservesRange) {
  for (auto name : kTransformOrder) {
    auto cfg = only(std::string(name), 1.0, 20, 20);
    if (name == "color_jitter") cfg.transforms[0].params = {{"brightness", 0.9}, {"contrast", 0.9}};
    if (name == "gaussian_noise") cfg.transforms[0].params = {{"sigma", 0.5}};
    const auto pipeline = build_pipeline(cfg);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto out = pipeline.apply(random_image(24, 24, seed), seed);
      double lo, hi;
      cv::minMaxLoc(out.reshape(1), &lo, &hi);
      EXPECT_GE(lo, 0.0) << name;
      EXPECT_LE(hi, 1.0) << name;
    }
  }
}

TEST(Augmentation, GatingFrequencyMatchesProbability) {
  const auto cfg = default_config(8, 8);
  const auto pipeline = build_pipeline(cfg);
  const auto img = random_image(8, 8, 7);
  constexpr int kTrials = 10000;
  std::vector<int> counts(kTransformOrder.size(), 0);
  std::mt19937_64 rng(13);
  std::vector<bool> fired;
  for (int i = 0; i < kTrials; ++i) {
    pipeline.apply(img, rng, &fired);
    for (std::size_t k = 0; k < fired.size(); ++k) counts[k] += fired[k];
  }
  for (const auto& t : cfg.transforms) {
    const auto k = static_cast<std::size_t>(std::find(kTransformOrder.begin(), kTransformOrder.end(), t.name) -
                                            kTransformOrder.begin());
    const double freq = static_cast<double>(counts[k]) / kTrials;
    const double band = 3.0 * std::sqrt(t.p * (1.0 - t.p) / kTrials);
    EXPECT_NEAR(freq, t.p, band + 1e-12) << t.name;
  }
}

TEST(Augmentation, ListingOrderDoesNotMatter) {
  auto cfg = default_config(24, 24);
  auto reversed = cfg;
  std::reverse(reversed.transforms.begin(), reversed.transforms.end());
  const auto img = random_image(30, 30, 8);
  EXPECT_TRUE(identical(build_pipeline(cfg).apply(img, 5), build_pipeline(reversed).apply(img, 5)));
}

TEST(Augmentation, InvalidConfigsAreRejectedWithEveryProblem) {
  AugmentationConfig cfg;
  cfg.transforms = {{"posterize", 0.5, {}}, {"horizontal_flip", 1.5, {}}, {"cutout", 0.1, {{"radius", 3}}}};
  try {
    build_pipeline(cfg);
    FAIL() << "expected ConfigError";
  } catch (const slyk::ConfigError& e) {
    EXPECT_EQ(e.violations().size(), 3u);
  }
}

TEST(Augmentation, PhotometricSubsetHasNoGeometry) {
  const auto cfg = photometric_subset(default_config(112, 112), 36, 60);
  for (const auto& t : cfg.transforms) {
    EXPECT_NE(t.name, "horizontal_flip");
    EXPECT_NE(t.name, "random_affine");
    EXPECT_NE(t.name, "random_rotation");
    EXPECT_NE(t.name, "random_crop");
  }
  EXPECT_EQ(cfg.out_h, 36);
  EXPECT_EQ(cfg.out_w, 60);
}

TEST(Augmentation, WrongChannelCountIsRejected) {
  cv::Mat gray(10, 10, CV_32FC1, cv::Scalar(0.5));
  EXPECT_THROW(generate_views(gray, build_pipeline(default_config(8, 8)), 1), slyk::ContractError);
}

// Contrast scales every channel about the grey mean, so a grey image stays grey.
TEST(Augmentation, ContrastTreatsChannelsAlike) {
  auto cfg = only("color_jitter", 1.0, 16, 16);
  cfg.transforms[0].params = {{"brightness", 0.0}, {"contrast", 0.5}, {"saturation", 0.0}, {"hue", 0.0}};
  cv::Mat grey(16, 16, CV_32FC3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) grey.at<cv::Vec3f>(y, x) = cv::Vec3f::all(0.2f + 0.6f * static_cast<float>(x) / 15);
  const auto pipeline = build_pipeline(cfg);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto out = pipeline.apply(grey, seed);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const auto p = out.at<cv::Vec3f>(y, x);
        ASSERT_EQ(p[0], p[1]);
        ASSERT_EQ(p[1], p[2]);
      }
    EXPECT_NEAR(cv::mean(out)[0], cv::mean(grey)[0], 1e-5);
  }
}
