#include "sgscene/bev_image.hpp"

#include <png.h>

#include <stdexcept>
#include <vector>

namespace sgscene {

Rgb class_color(SemanticClass c) {
  static constexpr std::array<Rgb, kNumClasses> kColors = {{
      {0, 0, 0},        // Free
      {128, 64, 128},   // Road
      {70, 70, 70},     // Building
      {0, 0, 142},      // Vehicle
      {220, 20, 60},    // Pedestrian
      {153, 153, 153},  // Pole
      {107, 142, 35},   // Vegetation
      {250, 170, 160},  // Other
  }};
  return kColors.at(static_cast<std::size_t>(c));
}

namespace {

void append_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

}  // namespace

std::string encode_bev_png(const BevMap& map, int scale) {
  if (scale < 1) throw std::invalid_argument("png scale must be >= 1");
  const int w = map.width * scale;
  const int h = map.height * scale;
  std::vector<png_byte> pixels(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb rgb = class_color(map.at(y / scale, x / scale));
      auto* px = &pixels[(static_cast<std::size_t>(y) * w + x) * 3];
      px[0] = rgb[0];
      px[1] = rgb[1];
      px[2] = rgb[2];
    }
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::string out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = &pixels[static_cast<std::size_t>(y) * w * 3];
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encoding failed");
  }
  png_set_write_fn(png, &out, append_to_string, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace sgscene
