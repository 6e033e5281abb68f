#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "vitpad/errors.hpp"
#include "vitpad/image.hpp"
#include "vitpad/preprocess.hpp"
#include "vitpad/rng.hpp"

using namespace vitpad;
namespace fs = std::filesystem;

namespace {

RawImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  RawImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vitpad_test_preprocess";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(AlignCrop, EyesAtTargetsIsIdentity) {
  const auto img = random_image(224, 224, 1);
  const Landmarks lm{{0.35 * 224, 0.38 * 224}, {0.65 * 224, 0.38 * 224}};
  const auto out = align_crop(img, lm);
  ASSERT_EQ(out.shape(), (Shape{3, 224, 224}));
  EXPECT_EQ(out, to_tensor(img));
}

TEST(AlignCrop, FitIsExactAtEyes) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Landmarks lm{{rng.uniform() * 500, rng.uniform() * 500}, {rng.uniform() * 500, rng.uniform() * 500}};
    const auto t = fit_similarity(lm, 224);
    const auto l = t.apply(lm.left_eye), r = t.apply(lm.right_eye);
    EXPECT_NEAR(l.x, 0.35 * 224, 1e-9);
    EXPECT_NEAR(l.y, 0.38 * 224, 1e-9);
    EXPECT_NEAR(r.x, 0.65 * 224, 1e-9);
    EXPECT_NEAR(r.y, 0.38 * 224, 1e-9);
    const auto back = t.invert(l);
    EXPECT_NEAR(back.x, lm.left_eye.x, 1e-9);
  }
}

TEST(AlignCrop, QuarterTurnRotationGivesSameCrop) {
  const std::size_t w = 80, h = 60;
  const auto img = random_image(w, h, 2);
  const Landmarks lm{{30.3, 25.7}, {49.1, 27.2}};
  // rotate 90° clockwise: old (x, y) → new (h−1−y, x)
  RawImage rot(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rot.at(h - 1 - y, x, c) = img.at(x, y, c);
  auto turn = [&](Point p) { return Point{static_cast<double>(h - 1) - p.y, p.x}; };
  const Landmarks lm_rot{turn(lm.left_eye), turn(lm.right_eye)};

  const auto t = fit_similarity(lm_rot, 32);
  EXPECT_NEAR(t.apply(lm_rot.left_eye).x, 0.35 * 32, 0.5);
  EXPECT_NEAR(t.apply(lm_rot.right_eye).y, 0.38 * 32, 0.5);

  const auto a = align_crop(img, lm, 32), b = align_crop(rot, lm_rot, 32);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-3) << i;
}

TEST(AlignCrop, DoublingResolutionIsInvariant) {
  // linear ramps are reproduced exactly by bilinear sampling at any scale
  RawImage small(64, 64), big(128, 128);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      for (std::size_t c = 0; c < 3; ++c) small.at(x, y, c) = static_cast<std::uint8_t>(2 * x + 2 * y);
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x)
      for (std::size_t c = 0; c < 3; ++c) big.at(x, y, c) = static_cast<std::uint8_t>(x + y);
  const Landmarks lm{{24.0, 24.0}, {40.0, 24.0}};
  const Landmarks lm2{{48.0, 48.0}, {80.0, 48.0}};
  const auto a = align_crop(small, lm, 32), b = align_crop(big, lm2, 32);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-3);
}

TEST(AlignCrop, OutputWithinByteRange) {
  const auto img = random_image(50, 40, 3);
  const auto out = align_crop(img, Landmarks{{10, 30}, {40, 5}}, 48);
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
  const auto n = normalize(out);
  for (float v : n.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(AlignCrop, GeometryErrors) {
  const auto img = random_image(32, 32, 5);
  EXPECT_THROW(align_crop(img, Landmarks{{10, 10}, {10, 10}}), GeometryError);
  EXPECT_THROW(align_crop(img, Landmarks{{10, 10}, {40, 10}}), GeometryError);
  EXPECT_THROW(align_crop(img, Landmarks{{-1, 10}, {20, 10}}), GeometryError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(align_crop(img, Landmarks{{nan, 10}, {20, 10}}), GeometryError);
}

TEST(Normalize, ReferenceValues) {
  const Tensor<float> t({3, 1, 1}, std::vector<float>{0.0f, 255.0f, 128.0f});
  const auto n = normalize(t);
  EXPECT_EQ(n[0], -1.0f);
  EXPECT_EQ(n[1], 1.0f);
  EXPECT_NEAR(n[2], 0.00392156862745098, 1e-7);
}

TEST(Hflip, DirectDefinition) {
  Tensor<double> t({3, 1, 2});
  for (std::size_t c = 0; c < 3; ++c) {
    t(c, 0, 0) = 1.0 + static_cast<double>(c);
    t(c, 0, 1) = 10.0 + static_cast<double>(c);
  }
  const auto f = hflip(t);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(f(c, 0, 0), t(c, 0, 1));
    EXPECT_EQ(f(c, 0, 1), t(c, 0, 0));
  }
}

TEST(Hflip, InvolutionAndSymmetricFixedPoint) {
  const auto t = to_tensor<float>(random_image(7, 5, 6));
  EXPECT_EQ(hflip(hflip(t)), t);
  Tensor<float> sym({3, 2, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) sym(c, y, x) = sym(c, y, 3 - x) = static_cast<float>(c * 10 + y * 3 + x);
  EXPECT_EQ(hflip(sym), sym);
}

TEST(Ppm, RoundTrip) {
  const auto img = random_image(13, 7, 8);
  const auto p = temp_path("img.ppm").string();
  write_ppm(img, p);
  EXPECT_EQ(read_ppm(p), img);
}

TEST(Ppm, HeaderCommentsAccepted) {
  const auto p = temp_path("comment.ppm").string();
  {
    std::ofstream os(p, std::ios::binary);
    os << "P6\n# made by hand\n2 1\n255\n";
    const unsigned char px[6] = {1, 2, 3, 4, 5, 6};
    os.write(reinterpret_cast<const char*>(px), 6);
  }
  const auto img = read_ppm(p);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.at(1, 0, 2), 6);
}

TEST(Ppm, Rejections) {
  const auto p = temp_path("bad.ppm").string();
  {
    std::ofstream os(p, std::ios::binary);
    os << "P3\n1 1\n255\n0 0 0\n";
  }
  EXPECT_THROW(read_ppm(p), FormatError);
  write_ppm(random_image(4, 4, 1), p);
  fs::resize_file(p, fs::file_size(p) - 2);
  EXPECT_THROW(read_ppm(p), CorruptionError);
  EXPECT_THROW(read_ppm(temp_path("missing.ppm").string()), IoError);
}
