#include "stackgen/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stackgen/error.hpp"

namespace stackgen {

ImageU8 read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw FormatError("read_png: cannot open '" + path + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  ImageU8 img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError("read_png: failed decoding '" + path + "': " + png.message);
  }
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(3) * img.width * img.height)
    throw DimensionError("write_png: inconsistent image buffer");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw FormatError("write_png: failed writing '" + path + "': " + png.message);
}

ImageU8 chw_to_u8(const float* chw, int height, int width) {
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(3) * width * height);
  const std::int64_t plane = static_cast<std::int64_t>(height) * width;
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = (chw[c * plane + i] + 1.0f) * 127.5f;
      const long q = std::lround(std::min(std::max(v, 0.0f), 255.0f));
      img.pixels[static_cast<std::size_t>(i) * 3 + c] = static_cast<std::uint8_t>(q);
    }
  return img;
}

std::vector<float> u8_to_chw(const ImageU8& img) {
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  std::vector<float> chw(static_cast<std::size_t>(3) * plane);
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      chw[c * plane + i] = static_cast<float>(img.pixels[static_cast<std::size_t>(i) * 3 + c]) /
                               127.5f -
                           1.0f;
  return chw;
}

std::vector<float> box_downsample_chw(const std::vector<float>& chw, int height, int width,
                                      int factor) {
  if (factor < 1 || height % factor != 0 || width % factor != 0)
    throw DimensionError("box_downsample_chw: " + std::to_string(height) + "x" +
                         std::to_string(width) + " not divisible by " + std::to_string(factor));
  const int oh = height / factor, ow = width / factor;
  std::vector<float> out(static_cast<std::size_t>(3) * oh * ow);
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float acc = 0.0f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += chw[(static_cast<std::size_t>(c) * height + y * factor + dy) * width +
                       x * factor + dx];
        out[(static_cast<std::size_t>(c) * oh + y) * ow + x] = acc * inv;
      }
  return out;
}

std::vector<float> resize_bilinear_chw(const std::vector<float>& chw, int height, int width,
                                       int out_height, int out_width) {
  std::vector<float> out(static_cast<std::size_t>(3) * out_height * out_width);
  const float sy = static_cast<float>(height) / static_cast<float>(out_height);
  const float sx = static_cast<float>(width) / static_cast<float>(out_width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out_height; ++y) {
      const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
      const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, height - 1);
      const int y1 = std::min(y0 + 1, height - 1);
      const float wy = std::clamp(fy - static_cast<float>(y0), 0.0f, 1.0f);
      for (int x = 0; x < out_width; ++x) {
        const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
        const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, width - 1);
        const int x1 = std::min(x0 + 1, width - 1);
        const float wx = std::clamp(fx - static_cast<float>(x0), 0.0f, 1.0f);
        auto at = [&](int yy, int xx) {
          return chw[(static_cast<std::size_t>(c) * height + yy) * width + xx];
        };
        const float top = at(y0, x0) * (1.0f - wx) + at(y0, x1) * wx;
        const float bot = at(y1, x0) * (1.0f - wx) + at(y1, x1) * wx;
        out[(static_cast<std::size_t>(c) * out_height + y) * out_width + x] =
            top * (1.0f - wy) + bot * wy;
      }
    }
  return out;
}

ImageU8 make_grid(const std::vector<ImageU8>& tiles, int cols, int pad) {
  if (tiles.empty()) throw ContractError("make_grid: no tiles");
  if (cols < 1) throw ContractError("make_grid: cols must be positive");
  const int tw = tiles[0].width, th = tiles[0].height;
  for (const auto& t : tiles)
    if (t.width != tw || t.height != th)
      throw DimensionError("make_grid: tiles must share one size");
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  ImageU8 grid;
  grid.width = cols * tw + (cols + 1) * pad;
  grid.height = rows * th + (rows + 1) * pad;
  grid.pixels.assign(static_cast<std::size_t>(3) * grid.width * grid.height, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    const int ox = pad + c * (tw + pad), oy = pad + r * (th + pad);
    for (int y = 0; y < th; ++y)
      std::memcpy(grid.pixels.data() + (static_cast<std::size_t>(oy + y) * grid.width + ox) * 3,
                  tiles[i].pixels.data() + static_cast<std::size_t>(y) * tw * 3,
                  static_cast<std::size_t>(tw) * 3);
  }
  return grid;
}

}  // namespace stackgen
