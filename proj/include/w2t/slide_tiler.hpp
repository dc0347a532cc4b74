#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace w2t {

// Row-major 8-bit RGB raster holding one slide (or its thumbnail).
struct SlideImage {
  std::string slide_id;
  int width_px = 0;
  int height_px = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  SlideImage() = default;
  SlideImage(std::string id, int width, int height);

  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width_px + x) * 3;
  }
  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width_px + x) * 3;
  }
  void validate() const;
};

struct Hsv {
  double h = 0.0;  // degrees, [0, 360)
  double s = 0.0;  // [0, 1]
  double v = 0.0;  // [0, 1]
};

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);

// Saturation (HSV S channel) of a single pixel; the only channel the
// foreground test needs.
double saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b);

struct ForegroundMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 1 = tissue

  bool operator()(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  std::size_t count() const;
};

ForegroundMask foreground_mask(const SlideImage& img, double sat_threshold);

struct Patch {
  int row = 0;
  int col = 0;
  int x0 = 0;
  int y0 = 0;
  double foreground_fraction = 0.0;

  bool operator==(const Patch&) const = default;
};

struct TileSet {
  std::string slide_id;
  int patch_size_px = 256;
  int image_width = 0;
  int image_height = 0;
  std::vector<Patch> patches;  // row-major

  bool operator==(const TileSet&) const = default;
};

struct TileOptions {
  int patch_size_px = 256;
  double sat_threshold = 0.05;
  double keep_threshold = 0.5;
};

// Non-overlapping grid anchored at (0,0); incomplete border cells are
// dropped. Throws EmptySlide when no cell reaches keep_threshold.
TileSet tile(const SlideImage& img, const TileOptions& opts);

nlohmann::json to_json(const TileSet& tiles);
TileSet tileset_from_json(const nlohmann::json& j);
void save_tileset(const TileSet& tiles, const std::filesystem::path& path);
TileSet load_tileset(const std::filesystem::path& path);

// Image files: binary PPM (P6) and PNG. Format is chosen by magic bytes
// on read and by extension on write.
SlideImage read_image(const std::filesystem::path& path);
void write_image(const SlideImage& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const SlideImage& img);

}  // namespace w2t
