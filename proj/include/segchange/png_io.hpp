#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace segchange {

// Minimal 8-bit PNG support over libpng: grayscale for masks, RGB for
// bitemporal images. Row-major, top-left origin.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height*width
};

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3, interleaved
};

GrayImage read_gray_png(const std::string& path);
RgbImage read_rgb_png(const std::string& path);
void write_gray_png(const std::string& path, const GrayImage& img);
void write_rgb_png(const std::string& path, const RgbImage& img);

}  // namespace segchange
