#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stackgen {

// 8-bit RGB image, row-major interleaved.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Pixel mapping between [-1, 1] floats and 8-bit:
//   u8 = round((x + 1) * 127.5), clamped; x = u8 / 127.5 - 1.
ImageU8 chw_to_u8(const float* chw, int height, int width);
std::vector<float> u8_to_chw(const ImageU8& img);

// Exact box filter; height and width must be divisible by factor.
std::vector<float> box_downsample_chw(const std::vector<float>& chw, int height, int width,
                                      int factor);

// General resampler used when source and target sizes are not an integer
// ratio.
std::vector<float> resize_bilinear_chw(const std::vector<float>& chw, int height, int width,
                                       int out_height, int out_width);

// Tiles equally sized images into a grid with a black gutter.
ImageU8 make_grid(const std::vector<ImageU8>& tiles, int cols, int pad = 2);

}  // namespace stackgen
