#include "segchange/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "segchange/errors.hpp"

namespace segchange {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Reads any 8/16-bit PNG and converts to the requested channel count
// (1 = gray, 3 = RGB) at 8 bits.
std::vector<std::uint8_t> read_png(const std::string& path, int want_channels, int& height,
                                   int& width) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw LoadError("cannot open PNG: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path);
  }
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (want_channels == 1) {
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  } else {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  out.assign(static_cast<std::size_t>(height) * width * want_channels, 0);
  row_ptrs.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    row_ptrs[static_cast<std::size_t>(y)] =
        out.data() + static_cast<std::size_t>(y) * width * want_channels;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const std::uint8_t* pixels, int height, int width,
               int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    row_ptrs[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(pixels) + static_cast<std::size_t>(y) * width * channels;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_gray_png(const std::string& path) {
  GrayImage img;
  img.pixels = read_png(path, 1, img.height, img.width);
  return img;
}

RgbImage read_rgb_png(const std::string& path) {
  RgbImage img;
  img.pixels = read_png(path, 3, img.height, img.width);
  return img;
}

void write_gray_png(const std::string& path, const GrayImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width)
    throw ShapeError("gray image buffer size mismatch");
  write_png(path, img.pixels.data(), img.height, img.width, 1);
}

void write_rgb_png(const std::string& path, const RgbImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3)
    throw ShapeError("rgb image buffer size mismatch");
  write_png(path, img.pixels.data(), img.height, img.width, 3);
}

}  // namespace segchange
