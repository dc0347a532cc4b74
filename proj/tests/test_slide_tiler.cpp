#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/synthetic.hpp"

using namespace w2t;

namespace {

SlideImage solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  SlideImage img("solid", w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto* p = img.at(x, y);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  }
  return img;
}

SlideImage red_left_half(int w, int h) {
  SlideImage img = solid(w, h, 255, 255, 255);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w / 2; ++x) {
      auto* p = img.at(x, y);
      p[1] = 0;
      p[2] = 0;
    }
  }
  return img;
}

}  // namespace

TEST_SUITE("slide_tiler") {
  TEST_CASE("rgb_to_hsv on reference pixels") {
    const auto white = rgb_to_hsv(255, 255, 255);
    CHECK(white.h == 0.0);
    CHECK(white.s == 0.0);
    CHECK(white.v == 1.0);

    const auto red = rgb_to_hsv(255, 0, 0);
    CHECK(red.h == 0.0);
    CHECK(red.s == 1.0);
    CHECK(red.v == 1.0);

    // max 128, min 64: s = 64/128, v = 128/255
    const auto dark = rgb_to_hsv(128, 64, 64);
    CHECK(dark.h == doctest::Approx(0.0));
    CHECK(dark.s == doctest::Approx(0.5));
    CHECK(dark.v == doctest::Approx(128.0 / 255.0));

    const auto green = rgb_to_hsv(0, 255, 0);
    CHECK(green.h == doctest::Approx(120.0));
    const auto blue = rgb_to_hsv(0, 0, 255);
    CHECK(blue.h == doctest::Approx(240.0));
    const auto magenta = rgb_to_hsv(255, 0, 255);
    CHECK(magenta.h == doctest::Approx(300.0));
    CHECK(saturation(128, 64, 64) == doctest::Approx(0.5));
  }

  TEST_CASE("hue stays in [0, 360)") {
    for (int r = 0; r < 256; r += 51) {
      for (int g = 0; g < 256; g += 51) {
        for (int b = 0; b < 256; b += 51) {
          const auto hsv = rgb_to_hsv(r, g, b);
          CHECK(hsv.h >= 0.0);
          CHECK(hsv.h < 360.0);
          CHECK(hsv.s >= 0.0);
          CHECK(hsv.s <= 1.0);
        }
      }
    }
  }

  TEST_CASE("foreground mask") {
    CHECK(foreground_mask(solid(16, 8, 255, 255, 255), 0.05).count() == 0);
    CHECK(foreground_mask(solid(16, 8, 255, 0, 0), 0.05).count() == 16 * 8);

    const auto img = red_left_half(16, 8);
    const auto mask = foreground_mask(img, 0.05);
    CHECK(mask.width == 16);
    CHECK(mask.height == 8);
    CHECK(mask.count() == 8 * 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 16; ++x) CHECK(mask(x, y) == (x < 8));
    }
    CHECK_THROWS_AS(foreground_mask(img, 0.0), Error);
    CHECK_THROWS_AS(foreground_mask(img, 1.0), Error);
  }

  TEST_CASE("tile a fully red slide") {
    const auto ts = tile(solid(512, 512, 255, 0, 0), TileOptions{256, 0.05, 0.5});
    REQUIRE(ts.patches.size() == 4);
    CHECK(ts.patches[0] == Patch{0, 0, 0, 0, 1.0});
    CHECK(ts.patches[1] == Patch{0, 1, 256, 0, 1.0});
    CHECK(ts.patches[2] == Patch{1, 0, 0, 256, 1.0});
    CHECK(ts.patches[3] == Patch{1, 1, 256, 256, 1.0});
  }

  TEST_CASE("tile a white slide is empty") {
    try {
      tile(solid(512, 512, 255, 255, 255), TileOptions{});
      FAIL("expected EmptySlide");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptySlide);
    }
  }

  TEST_CASE("left-half slide keeps the left column") {
    const auto ts = tile(red_left_half(512, 512), TileOptions{256, 0.05, 0.5});
    REQUIRE(ts.patches.size() == 2);
    CHECK(ts.patches[0].col == 0);
    CHECK(ts.patches[0].row == 0);
    CHECK(ts.patches[1].col == 0);
    CHECK(ts.patches[1].row == 1);
  }

  TEST_CASE("border cells that do not fit are dropped") {
    const auto ts = tile(solid(300, 530, 255, 0, 0), TileOptions{256, 0.05, 0.5});
    CHECK(ts.patches.size() == 2);  // 1 column x 2 rows
    for (const auto& p : ts.patches) {
      CHECK(p.x0 + 256 <= 300);
      CHECK(p.y0 + 256 <= 530);
    }
  }

  TEST_CASE("keep threshold is inclusive") {
    // Exactly half the cell is red.
    const auto ts = tile(red_left_half(8, 8), TileOptions{8, 0.05, 0.5});
    REQUIRE(ts.patches.size() == 1);
    CHECK(ts.patches[0].foreground_fraction == 0.5);
    CHECK_THROWS_AS(tile(red_left_half(8, 8), TileOptions{8, 0.05, 0.51}), Error);
  }

  TEST_CASE("tiling is deterministic and monotone in both thresholds") {
    const auto img = make_synthetic_slide("s01", 7);
    const auto a = tile(img, TileOptions{64, 0.05, 0.5});
    const auto b = tile(img, TileOptions{64, 0.05, 0.5});
    CHECK(a == b);
    CHECK(to_json(a).dump() == to_json(b).dump());

    auto count = [&](double sat, double keep) {
      try {
        return tile(img, TileOptions{64, sat, keep}).patches.size();
      } catch (const Error&) {
        return std::size_t{0};
      }
    };
    std::size_t prev = count(0.01, 0.5);
    for (double sat : {0.05, 0.2, 0.4, 0.6, 0.9}) {
      const auto n = count(sat, 0.5);
      CHECK(n <= prev);
      prev = n;
    }
    prev = count(0.05, 0.0);
    for (double keep : {0.1, 0.3, 0.5, 0.8, 1.0}) {
      const auto n = count(0.05, keep);
      CHECK(n <= prev);
      prev = n;
    }
  }

  TEST_CASE("patches are row-major, in bounds and above threshold") {
    const auto img = make_synthetic_slide("s03", 7);
    const auto ts = tile(img, TileOptions{64, 0.05, 0.5});
    for (std::size_t i = 0; i < ts.patches.size(); ++i) {
      const auto& p = ts.patches[i];
      CHECK(p.foreground_fraction >= 0.5);
      CHECK(p.x0 == p.col * 64);
      CHECK(p.y0 == p.row * 64);
      CHECK(p.x0 + 64 <= img.width_px);
      CHECK(p.y0 + 64 <= img.height_px);
      if (i > 0) {
        const auto& q = ts.patches[i - 1];
        CHECK((q.row < p.row || (q.row == p.row && q.col < p.col)));
      }
    }
  }

  TEST_CASE("tileset JSON round trip") {
    const auto ts = tile(make_synthetic_slide("s02", 7), TileOptions{64, 0.05, 0.5});
    const auto dir = testing::scratch_dir("tiles");
    save_tileset(ts, dir / "t.json");
    CHECK(load_tileset(dir / "t.json") == ts);
    CHECK_THROWS_AS(tileset_from_json(nlohmann::json::parse(R"({"slide_id": "x"})")), Error);
  }

  TEST_CASE("image files round trip through PNG and PPM") {
    const auto img = make_synthetic_slide("s04", 7, 96, 64);
    const auto dir = testing::scratch_dir("images");
    write_image(img, dir / "s04.png");
    write_image(img, dir / "s04.ppm");
    const auto png = read_image(dir / "s04.png");
    const auto ppm = read_image(dir / "s04.ppm");
    CHECK(png.slide_id == "s04");
    CHECK(png.width_px == 96);
    CHECK(png.height_px == 64);
    CHECK(png.pixels == img.pixels);
    CHECK(ppm.pixels == img.pixels);
    write_file_atomic(dir / "bad.png", "not an image");
    CHECK_THROWS_AS(read_image(dir / "bad.png"), Error);
  }

  TEST_CASE("invalid options are rejected") {
    const auto img = solid(8, 8, 255, 0, 0);
    CHECK_THROWS_AS(tile(img, TileOptions{0, 0.05, 0.5}), Error);
    CHECK_THROWS_AS(tile(img, TileOptions{4, 0.05, 1.5}), Error);
    SlideImage broken("b", 4, 4);
    broken.pixels.resize(5);
    CHECK_THROWS_AS(broken.validate(), Error);
  }
}
