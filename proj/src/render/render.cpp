#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "viact/error.hpp"
#include "viact/render.hpp"

namespace viact {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
  for (size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + static_cast<long>(i));
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<long>(y) * width + x) * 3);
}

Rgb Image::get(int x, int y) const {
  const auto* p = pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  return {p[0], p[1], p[2]};
}

Image gray_image(std::span<const float> values, int height, int width) {
  if (values.size() != static_cast<size_t>(height) * width) throw DimensionError("gray_image: size mismatch");
  Image img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = std::clamp(static_cast<double>(values[static_cast<size_t>(y) * width + x]), 0.0, 1.0);
      const auto g = static_cast<uint8_t>(std::lround(v * 255.0));
      img.set(x, y, {g, g, g});
    }
  return img;
}

Rgb colormap(double t) {
  static constexpr std::array<Rgb, 9> kStops = {{{68, 1, 84},
                                                 {72, 40, 120},
                                                 {62, 74, 137},
                                                 {49, 104, 142},
                                                 {38, 130, 142},
                                                 {31, 158, 137},
                                                 {53, 183, 121},
                                                 {109, 205, 89},
                                                 {253, 231, 37}}};
  if (!std::isfinite(t)) t = 0.0;
  const double u = std::clamp(t, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min(static_cast<size_t>(u), kStops.size() - 2);
  const double f = u - static_cast<double>(i);
  Rgb out;
  for (size_t c = 0; c < 3; ++c) {
    out[c] = static_cast<uint8_t>(std::lround((1.0 - f) * kStops[i][c] + f * kStops[i + 1][c]));
  }
  return out;
}

void draw_disc(Image& image, double x, double y, double radius, Rgb color) {
  const int x0 = static_cast<int>(std::floor(x - radius)), x1 = static_cast<int>(std::ceil(x + radius));
  const int y0 = static_cast<int>(std::floor(y - radius)), y1 = static_cast<int>(std::ceil(y + radius));
  for (int yy = y0; yy <= y1; ++yy)
    for (int xx = x0; xx <= x1; ++xx) {
      if ((xx - x) * (xx - x) + (yy - y) * (yy - y) <= radius * radius) image.set(xx, yy, color);
    }
}

void blit(Image& canvas, const Image& tile, int x, int y) {
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) canvas.set(x + c, y + r, tile.get(c, r));
}

Image render_attention(std::span<const float> frame, int height, int width, const PointSet& points,
                       std::span<const double> scores) {
  if (scores.size() != points.size()) throw DimensionError("render_attention: one score per point is required");
  Image img = gray_image(frame, height, width);
  const double radius = std::max(1.0, width / 112.0);
  for (size_t i = 0; i < points.size(); ++i) draw_disc(img, points[i].x, points[i].y, radius, colormap(scores[i]));
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw DimensionError("write_png: empty image");
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!file) throw IngestionError("cannot open image for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw IngestionError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestionError("failed writing image: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<size_t>(y) * image.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace viact
