#include "w2t/slide_tiler.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "w2t/error.hpp"
#include "w2t/io.hpp"

namespace w2t {

SlideImage::SlideImage(std::string id, int width, int height)
    : slide_id(std::move(id)),
      width_px(width),
      height_px(height),
      pixels(static_cast<std::size_t>(width) * height * 3, 0) {}

void SlideImage::validate() const {
  if (width_px <= 0 || height_px <= 0)
    throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(width_px) * height_px * 3)
    throw Error(ErrorCode::kInvalidArgument, "pixel buffer length != width*height*3");
}

Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta > 0.0) {
    double h;
    if (mx == r) {
      h = 60.0 * std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / delta + 2.0);
    } else {
      h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    out.h = h;
  }
  return out;
}

double saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  return mx == 0 ? 0.0 : static_cast<double>(mx - mn) / mx;
}

std::size_t ForegroundMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

ForegroundMask foreground_mask(const SlideImage& img, double sat_threshold) {
  img.validate();
  if (!(sat_threshold > 0.0 && sat_threshold < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "sat_threshold must lie in (0,1)");
  ForegroundMask mask;
  mask.width = img.width_px;
  mask.height = img.height_px;
  mask.bits.resize(static_cast<std::size_t>(img.width_px) * img.height_px);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    const std::uint8_t* p = img.pixels.data() + i * 3;
    mask.bits[i] = saturation(p[0], p[1], p[2]) > sat_threshold ? 1 : 0;
  }
  return mask;
}

TileSet tile(const SlideImage& img, const TileOptions& opts) {
  if (opts.patch_size_px < 1)
    throw Error(ErrorCode::kInvalidArgument, "patch size must be >= 1");
  if (opts.keep_threshold < 0.0 || opts.keep_threshold > 1.0)
    throw Error(ErrorCode::kInvalidArgument, "keep_threshold must lie in [0,1]");
  const ForegroundMask mask = foreground_mask(img, opts.sat_threshold);

  TileSet out;
  out.slide_id = img.slide_id;
  out.patch_size_px = opts.patch_size_px;
  out.image_width = img.width_px;
  out.image_height = img.height_px;

  const int ps = opts.patch_size_px;
  const int rows = img.height_px / ps;
  const int cols = img.width_px / ps;
  const double area = static_cast<double>(ps) * ps;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int x0 = c * ps, y0 = r * ps;
      std::size_t fg = 0;
      for (int y = y0; y < y0 + ps; ++y) {
        const std::uint8_t* row = mask.bits.data() + static_cast<std::size_t>(y) * mask.width;
        for (int x = x0; x < x0 + ps; ++x) fg += row[x];
      }
      const double frac = static_cast<double>(fg) / area;
      if (frac >= opts.keep_threshold) out.patches.push_back({r, c, x0, y0, frac});
    }
  }
  if (out.patches.empty())
    throw Error(ErrorCode::kEmptySlide, "no patch of '" + img.slide_id + "' passed the foreground test");
  return out;
}

nlohmann::json to_json(const TileSet& tiles) {
  nlohmann::json patches = nlohmann::json::array();
  for (const auto& p : tiles.patches) {
    patches.push_back({{"row", p.row},
                       {"col", p.col},
                       {"x0", p.x0},
                       {"y0", p.y0},
                       {"foreground_fraction", p.foreground_fraction}});
  }
  return {{"slide_id", tiles.slide_id},
          {"patch_size_px", tiles.patch_size_px},
          {"image_width", tiles.image_width},
          {"image_height", tiles.image_height},
          {"patches", std::move(patches)}};
}

TileSet tileset_from_json(const nlohmann::json& j) {
  try {
    TileSet t;
    t.slide_id = j.at("slide_id").get<std::string>();
    t.patch_size_px = j.at("patch_size_px").get<int>();
    t.image_width = j.value("image_width", 0);
    t.image_height = j.value("image_height", 0);
    for (const auto& p : j.at("patches")) {
      t.patches.push_back({p.at("row").get<int>(), p.at("col").get<int>(), p.at("x0").get<int>(),
                           p.at("y0").get<int>(), p.at("foreground_fraction").get<double>()});
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("tileset: ") + e.what());
  }
}

void save_tileset(const TileSet& tiles, const std::filesystem::path& path) {
  write_json(path, to_json(tiles));
}

TileSet load_tileset(const std::filesystem::path& path) { return tileset_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Image files

namespace {

SlideImage decode_ppm(const std::string& bytes, const std::string& id) {
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw Error(ErrorCode::kFormatError, "bad PPM header");
    return std::stoi(bytes.substr(start, pos - start));
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw Error(ErrorCode::kFormatError, "only 8-bit PPM is supported");
  ++pos;  // single whitespace before raster
  SlideImage img(id, w, h);
  if (bytes.size() < pos + img.pixels.size())
    throw Error(ErrorCode::kFormatError, "truncated PPM raster");
  std::memcpy(img.pixels.data(), bytes.data() + pos, img.pixels.size());
  return img;
}

struct PngReadBuffer {
  const std::string* bytes;
  std::size_t offset;
};

void png_read_from_buffer(png_structp png, png_bytep out, png_size_t n) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + n > buf->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, buf->bytes->data() + buf->offset, n);
  buf->offset += n;
}

SlideImage decode_png(const std::string& bytes, const std::string& id) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kFormatError, "cannot decode PNG");
  }
  PngReadBuffer buf{&bytes, 0};
  png_set_read_fn(png, &buf, png_read_from_buffer);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  SlideImage img(id, w, h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const SlideImage& img) {
  img.validate();
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, nullptr);
  png_set_IHDR(png, info, img.width_px, img.height_px, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height_px; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                             static_cast<std::size_t>(y) * img.width_px * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

SlideImage read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string id = path.stem().string();
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, id);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0)
    return decode_png(bytes, id);
  throw Error(ErrorCode::kFormatError, path.string() + ": not a PPM (P6) or PNG image");
}

void write_image(const SlideImage& img, const std::filesystem::path& path) {
  img.validate();
  if (path.extension() == ".png") {
    const auto bytes = encode_png(img);
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return;
  }
  std::string out = "P6\n" + std::to_string(img.width_px) + " " + std::to_string(img.height_px) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  write_file_atomic(path, out);
}

}  // namespace w2t
