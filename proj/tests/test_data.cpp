#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "slyk/data.hpp"

using namespace slyk;
using namespace slyk::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slyk_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double covered_fraction(const cv::Rect2d& inner, const cv::Rect2d& outer) {
  return (inner & outer).area() / inner.area();
}

// Writes a tiny gaze fixture with the given label rows (after the header).
fs::path write_fixture(const std::string& name, const std::vector<std::string>& rows, int n_images) {
  auto root = temp_dir(name);
  fs::create_directories(root / "images");
  cv::Mat img(16, 16, CV_32FC3, cv::Scalar(0.5, 0.4, 0.3));
  for (int i = 0; i < n_images; ++i) image::save_png(root / "images" / (std::to_string(i) + ".png"), img);
  std::ofstream labels(root / "labels.csv");
  labels << "file,subject,pitch,yaw,unit\n";
  for (const auto& r : rows) labels << r << "\n";
  return root;
}

}  // namespace

TEST(Data, PatchesAreFixedSizeAndContainPupils) {
  SynthConfig cfg;
  cfg.count = 60;
  cfg.seed = 3;
  const auto ds = synth_generate(cfg);
  const PatchOptions opt;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& lm = *ds.manifest.records[i].landmarks;
    const auto [l, r] = extract_eye_patches(ds.images[i], lm, opt);
    EXPECT_EQ(l.rows, 36);
    EXPECT_EQ(l.cols, 60);
    EXPECT_EQ(r.rows, 36);
    EXPECT_EQ(r.cols, 60);
    EXPECT_EQ(l.type(), CV_32FC3);
    const auto c = canonical(lm);
    EXPECT_GT(covered_fraction(ds.truth[i].left_pupil, eye_box(c.left, opt).rect()), 0.8) << i;
    EXPECT_GT(covered_fraction(ds.truth[i].right_pupil, eye_box(c.right, opt).rect()), 0.8) << i;
  }
}

TEST(Data, PatchCropMatchesPlainResizeOnAlignedBox) {
  // A box that covers exactly a 60x36 pixel region must reproduce it.
  cv::Mat img(80, 100, CV_32FC3);
  cv::randu(img, 0.0, 1.0);
  EyeBox b;
  b.centre = {20 + 30 - 0.5, 10 + 18 - 0.5};
  b.width = 60;
  b.height = 36;
  const auto crop = crop_box(img, b, 36, 60);
  EXPECT_LT(cv::norm(crop, img(cv::Rect(20, 10, 60, 36)), cv::NORM_INF), 1e-5);
}

TEST(Data, LeftRightFollowsImageFrame) {
  cv::Mat img(64, 64, CV_32FC3, cv::Scalar(0, 0, 0));
  img(cv::Rect(0, 0, 32, 64)).setTo(cv::Scalar(1, 1, 1));
  EyeCorners lm{{{{40, 30}, {50, 30}}}, {{{10, 30}, {20, 30}}}};  // deliberately swapped
  const auto [l, r] = extract_eye_patches(img, lm);
  EXPECT_GT(cv::mean(l)[0], 0.99);
  EXPECT_LT(cv::mean(r)[0], 0.01);
}

TEST(Data, DegenerateOrOutsideLandmarksRaise) {
  cv::Mat img(64, 64, CV_32FC3, cv::Scalar(0.5, 0.5, 0.5));
  EyeCorners same{{{{10, 30}, {10, 30}}}, {{{40, 30}, {50, 30}}}};
  EXPECT_THROW(extract_eye_patches(img, same), DataError);
  EyeCorners outside{{{{10, 30}, {20, 30}}}, {{{40, 30}, {70, 30}}}};
  EXPECT_THROW(extract_eye_patches(img, outside), DataError);
}

TEST(Data, SynthRejectsEmptyCount) {
  SynthConfig cfg;
  cfg.count = 0;
  EXPECT_THROW(synth_generate(cfg), ContractError);
}

TEST(Data, SynthIsByteDeterministic) {
  SynthConfig cfg;
  cfg.count = 12;
  cfg.seed = 7;
  const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  write_dataset(synth_generate(cfg), a);
  write_dataset(synth_generate(cfg), b);
  for (const char* f : {"labels.csv", "landmarks.csv", "pupils.csv", "images/000005.png"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  cfg.seed = 8;
  const auto c = temp_dir("synth_c");
  write_dataset(synth_generate(cfg), c);
  EXPECT_NE(read_file(a / "labels.csv"), read_file(c / "labels.csv"));
}

TEST(Data, SynthSubjectsAndLabels) {
  SynthConfig cfg;
  cfg.count = 45;
  cfg.subjects = 15;
  const auto ds = synth_generate(cfg);
  EXPECT_EQ(subject_list(subjects_of(ds.manifest.records)).size(), 15u);
  for (const auto& r : ds.manifest.records) {
    EXPECT_LE(std::abs(r.label.pitch), geometry::deg2rad(cfg.pitch_max_deg));
    EXPECT_LE(std::abs(r.label.yaw), geometry::deg2rad(cfg.yaw_max_deg));
    const auto v = geometry::angles_to_vector(r.label);
    EXPECT_NEAR(std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z), 1.0, 1e-12);
  }
}

TEST(Data, PupilOffsetMonotoneInYawAndPitch) {
  double prev = -1e9;
  for (int deg = -45; deg <= 45; deg += 5) {
    const double x = pupil_offset({geometry::deg2rad(10.0), geometry::deg2rad(deg)}, 10.0).x;
    EXPECT_GT(x, prev);
    prev = x;
  }
  EXPECT_LT(pupil_offset({0.3, 0.0}, 10.0).y, 0.0);  // looking up moves the pupil up
  // The rendered pupils follow: sort by yaw and check the box centres.
  SynthConfig cfg;
  cfg.count = 40;
  cfg.subjects = 1;
  cfg.landmark_noise_px = 0;
  const auto ds = synth_generate(cfg);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& lm = *ds.manifest.records[i].landmarks;
    const double eye_cx = (lm.left[0].x + lm.left[1].x) / 2;
    const auto& box = ds.truth[i].left_pupil;
    const double dx = box.x + box.width / 2 - eye_cx;
    EXPECT_EQ(dx > 0, ds.manifest.records[i].label.yaw > 0) << i;
  }
}

TEST(Data, WriteThenLoadMatchesInMemory) {
  SynthConfig cfg;
  cfg.count = 10;
  cfg.seed = 11;
  const auto ds = synth_generate(cfg);
  const auto root = temp_dir("roundtrip");
  write_dataset(ds, root);
  const auto m = load_dataset(root);
  ASSERT_EQ(m.records.size(), 10u);
  const auto loaded = load_samples(m);
  const auto mem = synth_samples(ds);
  ASSERT_EQ(loaded.samples.size(), 10u);
  ASSERT_EQ(mem.samples.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(loaded.samples[i].label.pitch, mem.samples[i].label.pitch);
    EXPECT_EQ(loaded.samples[i].label.yaw, mem.samples[i].label.yaw);
    EXPECT_EQ(cv::norm(loaded.samples[i].face, mem.samples[i].face, cv::NORM_INF), 0.0);
    EXPECT_EQ(cv::norm(loaded.samples[i].left_patch, mem.samples[i].left_patch, cv::NORM_INF), 0.0);
    EXPECT_EQ(loaded.samples[i].illumination, mem.samples[i].illumination);
  }
}

TEST(Data, DegreesConvertToRadians) {
  const auto root = write_fixture("deg", {"0.png,a,45,90,deg", "1.png,a,-30,-180.0,deg", "2.png,b,0.1,0.2,rad"}, 3);
  // yaw of -180 is outside (-180, 180]
  try {
    load_dataset(root);
    FAIL() << "expected a load error";
  } catch (const DataError& e) {
    ASSERT_EQ(e.items().size(), 1u);
    EXPECT_NE(e.items()[0].find("line 3"), std::string::npos);
  }
  const auto ok = write_fixture("deg_ok", {"0.png,a,45,90,deg", "1.png,a,-30,180,deg", "2.png,b,0.1,0.2,rad"}, 3);
  const auto m = load_dataset(ok);
  ASSERT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.records[0].label.yaw, geometry::kPi / 2);
  EXPECT_EQ(m.records[0].label.pitch, geometry::kPi / 4);
  EXPECT_EQ(m.records[1].label.yaw, geometry::kPi);
  EXPECT_EQ(m.records[2].label.pitch, 0.1);
}

TEST(Data, LoadErrorsAreItemized) {
  const auto root = write_fixture("bad", {"0.png,a,nan,1,deg", "1.png,a,1,1,grad", "9.png,a,1,1,deg", "2.png,a,1"}, 3);
  try {
    load_dataset(root);
    FAIL() << "expected a load error";
  } catch (const DataError& e) {
    const auto& items = e.items();
    ASSERT_EQ(items.size(), 4u);
    EXPECT_NE(items[0].find("line 2"), std::string::npos);
    EXPECT_NE(items[0].find("finite"), std::string::npos);
    EXPECT_NE(items[1].find("unit"), std::string::npos);
    EXPECT_NE(items[2].find("9.png"), std::string::npos);
    EXPECT_NE(items[3].find("fields"), std::string::npos);
  }
}

TEST(Data, FixtureOfTenWithExclusions) {
  std::vector<std::string> rows;
  for (int i = 0; i < 10; ++i) rows.push_back(std::to_string(i) + ".png,s" + std::to_string(i % 2) + ",1,2,deg");
  const auto root = write_fixture("ten", rows, 10);
  {
    std::ofstream lm(root / "landmarks.csv");
    lm << "file,lx0,ly0,lx1,ly1,rx0,ry0,rx1,ry1\n";
    for (int i = 0; i < 8; ++i) lm << i << ".png,2,8,6,8,9,8,13,8\n";
    lm << "8.png,2,8,2,8,9,8,13,8\n";  // degenerate left eye; 9.png has no landmarks
  }
  const auto m = load_dataset(root);
  EXPECT_EQ(m.records.size(), 10u);
  const auto loaded = load_samples(m);
  EXPECT_EQ(loaded.samples.size(), 8u);
  ASSERT_EQ(loaded.excluded.size(), 2u);
  EXPECT_EQ(loaded.excluded[0].file, "8.png");
  EXPECT_EQ(loaded.excluded[1].file, "9.png");
}

TEST(Data, ExpressionLabels) {
  auto root = temp_dir("fer");
  fs::create_directories(root / "images");
  image::save_png(root / "images" / "a.png", cv::Mat(8, 8, CV_32FC3, cv::Scalar(0.2, 0.2, 0.2)));
  std::ofstream(root / "labels.csv") << "file,subject,class\na.png,x,6\n";
  const auto m = load_dataset(root);
  EXPECT_EQ(m.task, Task::kExpression);
  EXPECT_EQ(m.records[0].class_id, 6);
}

TEST(Data, RandomSplitPartitions) {
  const auto s = split_random(1000, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(s.train.size(), 800u);
  EXPECT_EQ(s.val.size(), 100u);
  EXPECT_EQ(s.test.size(), 100u);
  std::vector<int> seen(1000, 0);
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto i : *part) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
  const auto again = split_random(1000, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.test, again.test);
  EXPECT_NE(s.train, split_random(1000, {0.8, 0.1, 0.1}, 6).train);
  EXPECT_THROW(split_random(10, {0.8, 0.3, 0.1}, 0), ConfigError);
}

TEST(Data, LeaveOneSubjectOut) {
  SynthConfig cfg;
  cfg.count = 150;
  cfg.subjects = 15;
  const auto ds = synth_generate(cfg);
  const auto subjects = subjects_of(ds.manifest.records);
  const auto ids = subject_list(subjects);
  ASSERT_EQ(ids.size(), 15u);
  for (const auto& id : ids) {
    const auto s = split_loso(subjects, id, 3000.0 / 42000.0);
    EXPECT_EQ(s.test.size(), 10u);
    for (auto i : s.test) EXPECT_EQ(subjects[i], id);
    for (auto i : s.train) EXPECT_NE(subjects[i], id);
    for (auto i : s.val) EXPECT_NE(subjects[i], id);
    EXPECT_EQ(s.val.size(), 10u);  // ceil(140 * 1/14)
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 150u);
    EXPECT_LT(s.train.back(), s.val.front());  // validation is the tail
  }
  EXPECT_THROW(split_loso(subjects, "nobody", 0.1), ConfigError);
}
