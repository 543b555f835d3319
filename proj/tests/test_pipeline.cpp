#include "selfens/errors.hpp"
#include "selfens/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace selfens;

namespace {

Image ramp(int w, int h, int channels) {
  Image img(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = static_cast<float>((x + 2 * y + c) % 17) / 16.0f;
  return img;
}

} // namespace

TEST_CASE("bilinear upsampling uses half-pixel centres") {
  Image row(2, 1, 1);
  row.pixels = {0.0f, 1.0f};
  const Image up = resize(row, 4, 1);
  // centres map to -0.25, 0.25, 0.75, 1.25 in source coordinates
  CHECK(up.pixels[0] == doctest::Approx(0.0));
  CHECK(up.pixels[1] == doctest::Approx(0.25));
  CHECK(up.pixels[2] == doctest::Approx(0.75));
  CHECK(up.pixels[3] == doctest::Approx(1.0));
  CHECK(resize(row, 2, 1) == row);
  CHECK_THROWS_AS(resize(row, 0, 1), UsageError);
}

TEST_CASE("downsampling by two averages pixel pairs") {
  Image img(4, 2, 1);
  img.pixels = {0.0f, 0.5f, 1.0f, 0.0f, 0.2f, 0.4f, 0.6f, 0.8f};
  const Image half = resize(img, 2, 1);
  CHECK(half.pixels[0] == doctest::Approx((0.0 + 0.5 + 0.2 + 0.4) / 4));
  CHECK(half.pixels[1] == doctest::Approx((1.0 + 0.0 + 0.6 + 0.8) / 4));
}

TEST_CASE("grayscale uses BT.601 weights") {
  Image px(1, 1, 3);
  px.pixels = {1.0f, 0.0f, 0.0f};
  CHECK(to_grayscale(px).pixels[0] == doctest::Approx(0.299));
  px.pixels = {0.0f, 1.0f, 0.0f};
  CHECK(to_grayscale(px).pixels[0] == doctest::Approx(0.587));
  px.pixels = {0.0f, 0.0f, 1.0f};
  CHECK(to_grayscale(px).pixels[0] == doctest::Approx(0.114));
  const Image g = ramp(3, 3, 1);
  CHECK(to_grayscale(g) == g);
}

TEST_CASE("colour jitter: brightness shift, saturation blend, clamping") {
  Image px(1, 1, 3);
  px.pixels = {0.6f, 0.2f, 0.4f};
  const double luma = 0.299 * 0.6 + 0.587 * 0.2 + 0.114 * 0.4;
  const Image gray = color_jitter(px, JitterParams{0.0, 0.0});
  for (float v : gray.pixels)
    CHECK(v == doctest::Approx(luma));
  CHECK(color_jitter(px, JitterParams{0.0, 1.0}) == px);
  const Image bright = color_jitter(px, JitterParams{0.1, 1.0});
  CHECK(bright.pixels[0] == doctest::Approx(0.7));
  const Image sat = color_jitter(px, JitterParams{0.0, 3.0});
  CHECK(sat.pixels[0] == doctest::Approx(std::min(1.0, luma + 3 * (0.6 - luma))));
  CHECK(sat.pixels[1] == 0.0f);
  Image g(1, 1, 1, 0.95f);
  CHECK(color_jitter(g, JitterParams{0.2, 0.0}).pixels[0] == 1.0f);
}

TEST_CASE("flip and crop geometry") {
  const Image img = ramp(5, 3, 1);
  const Image f = hflip(img);
  CHECK(f.at(0, 1) == img.at(4, 1));
  CHECK(hflip(f) == img);
  const Image c = crop(img, 1, 1, 3, 2);
  CHECK(c.width == 3);
  CHECK(c.at(0, 0) == img.at(1, 1));
  CHECK(c.at(2, 1) == img.at(3, 2));
  CHECK_THROWS_AS(crop(img, 3, 0, 3, 2), ShapeError);
  CHECK_THROWS_AS(center_crop(img, {6, 2}), ShapeError);
  const Image cc = center_crop(ramp(9, 9, 1), {8, 8});
  CHECK(cc.at(0, 0) == ramp(9, 9, 1).at(0, 0));
}

TEST_CASE("random crop offsets cover the full range") {
  Image img(6, 1, 1);
  img.pixels = {0, 1, 2, 3, 4, 5};
  Rng rng(3);
  std::set<float> firsts;
  for (int i = 0; i < 200; ++i)
    firsts.insert(random_crop(img, {4, 1}, rng).pixels[0]);
  CHECK(firsts == std::set<float>{0, 1, 2});
}

TEST_CASE("augmented views are deterministic per stream and differ across streams") {
  const AugmentSpec spec = AugmentSpec::for_crop(32);
  CHECK(spec.source_size == Size2{36, 36});
  const Image src = ramp(36, 36, 3);
  const auto [a1, b1] = perturb_pair(src, spec, Rng(17));
  const auto [a2, b2] = perturb_pair(src, spec, Rng(17));
  CHECK(a1.shape() == Shape{1, 32, 32});
  CHECK(std::ranges::equal(a1.data(), a2.data()));
  CHECK(std::ranges::equal(b1.data(), b2.data()));
  CHECK_FALSE(std::ranges::equal(a1.data(), b1.data()));
  for (float v : a1.data())
    CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("degenerate augmentation reproduces the eval path") {
  const AugmentSpec spec = AugmentSpec::degenerate({36, 36}, {32, 32});
  const Image src = ramp(36, 36, 3);
  const Tensor eval = eval_path(src, spec);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto [a, b] = perturb_pair(src, spec, Rng(s));
    CHECK(std::ranges::equal(a.data(), eval.data()));
    CHECK(std::ranges::equal(b.data(), eval.data()));
  }
  CHECK_THROWS_AS(eval_path(ramp(40, 40, 1), spec), ShapeError);
}

TEST_CASE("spec validation") {
  AugmentSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.saturation_min = 2.0;
  CHECK_THROWS_AS(spec.validate(), UsageError);
  spec = {};
  spec.hflip_probability = 1.5;
  CHECK_THROWS_AS(spec.validate(), UsageError);
  spec = {};
  spec.crop_size = {200, 200};
  CHECK_THROWS_AS(spec.validate(), UsageError);
  CHECK_THROWS_AS(AugmentSpec::for_crop(12), UsageError);
}

TEST_CASE("image files round-trip") {
  testutil::TempDir dir;
  Image rgb = ramp(7, 5, 3);
  for (auto &p : rgb.pixels)
    p = std::round(p * 255.0f) / 255.0f;
  write_pnm(rgb, dir / "a.ppm");
  write_png(rgb, dir / "a.png");
  const Image p1 = read_image(dir / "a.ppm"), p2 = read_image(dir / "a.png");
  CHECK(p1.channels == 3);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) {
    CHECK(p1.pixels[i] == doctest::Approx(rgb.pixels[i]).epsilon(1e-6));
    CHECK(p2.pixels[i] == doctest::Approx(rgb.pixels[i]).epsilon(1e-6));
  }
  testutil::write_file(dir / "bad.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_WITH_AS(read_image(dir / "bad.pgm"), doctest::Contains("truncated"), DataError);
  testutil::write_file(dir / "junk.img", "hello");
  CHECK_THROWS_AS(read_image(dir / "junk.img"), DataError);
  CHECK_THROWS_AS(read_image(dir / "none.pgm"), DataError);
}
